//! `wlgnn`: graph generation, WL tests, separation reports, graph-matching
//! training and gradient self-checks from one binary.
//!
//! Exit codes: 0 success, 1 bad input, 2 a checked property failed, 3 runtime
//! failure. Every run writes `config.json` (the fully resolved settings) and
//! `run.log` (timings) under `--out`; CSV artifacts carry no timestamps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use wlgnn::gnn::{Family, ModelSpec, Variant};
use wlgnn::gradsuite::{grad_csv, run_grad_suite, GradSuiteConfig};
use wlgnn::graph::{gen_erdos_renyi, gen_random_regular};
use wlgnn::qap::{self, Decoder, GraphFamily, TrainConfig};
use wlgnn::separation::{self, Corpus, CorpusSpec, SeparationReport};
use wlgnn::wl::{compare, RefineOptions, WlTest};
use wlgnn::{Error, GraphTensor, RngSeed};

#[derive(Parser, Debug)]
#[command(name = "wlgnn", version, about = "Weisfeiler-Lehman tests and higher-order GNN experiments")]
struct Cli {
    /// Run seed; each command documents what it seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON file with optional "train" (training config) and "corpus"
    /// (corpus spec) sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample random graphs, or write the hard-pair fixtures.
    Gen(GenArgs),
    /// Run one WL test on two graph files.
    Wl(WlArgs),
    /// Separation report of a GNN family against its WL reference.
    Sep(SepArgs),
    /// Train a siamese model on graph matching instances.
    QapTrain(TrainArgs),
    /// Evaluate a checkpoint on fresh test sets.
    QapEval(EvalArgs),
    /// Evaluate several checkpoints on every noise level.
    QapSweep(SweepArgs),
    /// Finite-difference check of every primitive, layer, model and the loss.
    GradCheck(GradArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum GenFamily {
    Er,
    Regular,
    Fixtures,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "er")]
    family: GenFamily,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Args, Debug)]
struct WlArgs {
    /// vwl, wl<k> or fwl<k>.
    #[arg(long)]
    test: String,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum VariantArg {
    I,
    E,
}

#[derive(Args, Debug)]
struct SepArgs {
    /// "default" or a directory written by a previous run.
    #[arg(long, default_value = "default")]
    corpus: String,
    /// mgnn, lgnn2 or fgnn2.
    #[arg(long)]
    family: String,
    #[arg(long, value_enum, default_value = "i")]
    variant: VariantArg,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Also write the corpus graphs under OUT/corpus.
    #[arg(long)]
    save_corpus: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum GraphKind {
    Er,
    Regular,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    graph: Option<GraphKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    train_noise: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Also evaluate the best checkpoint on the test grid.
    #[arg(long)]
    eval: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum DecoderArg {
    Lap,
    RowArgmax,
}

impl From<DecoderArg> for Decoder {
    fn from(d: DecoderArg) -> Self {
        match d {
            DecoderArg::Lap => Decoder::Lap,
            DecoderArg::RowArgmax => Decoder::RowArgmax,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "lap")]
    decoder: DecoderArg,
    /// Also score the degree-profile baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, num_args = 1.., required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "lap")]
    decoder: DecoderArg,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[arg(long, default_value_t = 10)]
    points: u64,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }

    fn violation(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Input(_) | Error::Json(_) => 1,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    file: Value,
    started: Instant,
    log: Vec<String>,
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Outcome {
        fs::write(self.out(name), text).map_err(|e| Failure {
            code: 3,
            msg: format!("cannot write {}: {e}", self.out(name).display()),
        })
    }

    fn section<T: serde::de::DeserializeOwned>(&self, key: &str) -> std::result::Result<Option<T>, Failure> {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Failure::input(format!("config section \"{key}\": {e}"))),
        }
    }

    fn echo(&self, command: &str, resolved: Value) -> Outcome {
        let doc = json!({ "command": command, "seed": self.cli.seed, "resolved": resolved });
        self.write("config.json", &(serde_json::to_string_pretty(&doc).expect("json value") + "\n"))
    }

    fn note(&mut self, what: &str) {
        self.log.push(format!("{what}: {:.3}s", self.started.elapsed().as_secs_f64()));
    }
}

fn run(cli: &Cli) -> Outcome {
    let file = match &cli.config {
        None => json!({}),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::input(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?
        }
    };
    fs::create_dir_all(&cli.out).map_err(|e| Failure {
        code: 3,
        msg: format!("cannot create {}: {e}", cli.out.display()),
    })?;
    let mut ctx = Ctx {
        cli,
        file,
        started: Instant::now(),
        log: Vec::new(),
    };
    let result = match &cli.cmd {
        Cmd::Gen(a) => gen(&mut ctx, a),
        Cmd::Wl(a) => wl(&mut ctx, a),
        Cmd::Sep(a) => sep(&mut ctx, a),
        Cmd::QapTrain(a) => qap_train(&mut ctx, a),
        Cmd::QapEval(a) => qap_eval(&mut ctx, a),
        Cmd::QapSweep(a) => qap_sweep(&mut ctx, a),
        Cmd::GradCheck(a) => grad_check(&mut ctx, a),
    };
    ctx.note("total");
    let _ = fs::write(ctx.out("run.log"), ctx.log.join("\n") + "\n");
    result
}

fn load_graph(path: &Path) -> std::result::Result<GraphTensor, Failure> {
    GraphTensor::load(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn gen(ctx: &mut Ctx, a: &GenArgs) -> Outcome {
    let seed = RngSeed(ctx.cli.seed.unwrap_or(0));
    ctx.echo(
        "gen",
        json!({ "family": format!("{:?}", a.family).to_lowercase(), "n": a.n, "p": a.p, "d": a.d, "count": a.count, "seed": seed }),
    )?;
    if a.family == GenFamily::Fixtures {
        let fixtures = [
            ("c6.json", separation::c6()),
            ("2c3.json", separation::two_c3()),
            ("rook4x4.json", separation::rook_4x4()),
            ("shrikhande.json", separation::shrikhande()),
        ];
        for (name, g) in fixtures {
            g.save(ctx.out(name))?;
            println!("{}", ctx.out(name).display());
        }
        return Ok(());
    }
    for k in 0..a.count {
        let s = seed.derive(k as u64);
        let (tag, g) = match a.family {
            GenFamily::Er => ("er", gen_erdos_renyi(a.n, a.p, s)?),
            _ => ("regular", gen_random_regular(a.n, a.d, s)?),
        };
        let name = format!("{tag}-{k:03}.json");
        g.save(ctx.out(&name))?;
        println!("{}", ctx.out(&name).display());
    }
    Ok(())
}

fn wl(ctx: &mut Ctx, a: &WlArgs) -> Outcome {
    let test: WlTest = a.test.parse().map_err(|e: Error| Failure::input(e.to_string()))?;
    ctx.echo("wl", json!({ "test": test.to_string(), "a": a.a, "b": a.b, "max_rounds": a.max_rounds }))?;
    let g = load_graph(&a.a)?;
    let h = load_graph(&a.b)?;
    let opts = RefineOptions {
        max_rounds: a.max_rounds,
        ..RefineOptions::default()
    };
    let v = compare(test, &g, &h, &opts)?;
    ctx.note("refinement");
    let line = format!("separated={}\nrounds_a={}\nrounds_b={}\n", v.separated, v.rounds_g, v.rounds_h);
    print!("{line}");
    ctx.write("wl.txt", &line)
}

fn reference_test(family: Family) -> WlTest {
    match family {
        Family::Fgnn2 => WlTest::Fwl(2),
        Family::Mgnn | Family::Lgnn2 => WlTest::Vertex,
    }
}

fn sep(ctx: &mut Ctx, a: &SepArgs) -> Outcome {
    let family: Family = a.family.parse().map_err(|e: Error| Failure::input(e.to_string()))?;
    let variant = match a.variant {
        VariantArg::I => Variant::Invariant,
        VariantArg::E => Variant::Equivariant,
    };
    let run_seed = RngSeed(ctx.cli.seed.unwrap_or(5));
    let spec_file: Option<CorpusSpec> = ctx.section("corpus")?;
    let corpus_spec = spec_file.unwrap_or_default();
    let corpus = if a.corpus == "default" {
        separation::build_corpus(&corpus_spec)?
    } else {
        Corpus::load_dir(&a.corpus).map_err(|e| Failure::input(format!("{}: {e}", a.corpus)))?
    };
    let template = ModelSpec::uniform(family, variant, 1, a.layers, a.width);
    ctx.echo(
        "sep",
        json!({
            "corpus": if a.corpus == "default" { json!(corpus_spec) } else { json!(a.corpus) },
            "model": template, "seeds": a.seeds, "tol": a.tol, "run_seed": run_seed,
        }),
    )?;
    if a.save_corpus {
        corpus.save_dir(ctx.out("corpus"))?;
    }
    let reference = reference_test(family);
    let wl_report = separation::wl_separation_report(&corpus, reference, &RefineOptions::default())?;
    ctx.note("wl reference");
    let gnn_report = separation::gnn_separation_report(&corpus, &template, a.seeds, a.tol, run_seed)?;
    ctx.note("gnn report");
    let csv = separation::reports_csv(&[gnn_report.clone(), wl_report.clone()]);
    print!("{csv}");
    ctx.write("report.csv", &csv)?;
    summarize(&gnn_report, &wl_report, reference)
}

fn summarize(gnn: &SeparationReport, wl: &SeparationReport, reference: WlTest) -> Outcome {
    let violations = separation::check_inclusion(gnn, wl)?;
    let (hit, total) = separation::coverage(gnn, wl)?;
    eprintln!(
        "{}: {} violations against {reference}, covers {hit}/{total} {reference}-separated pairs",
        gnn.discriminator,
        violations.len()
    );
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::violation(format!(
            "{} separates pairs {reference} cannot: {}",
            gnn.discriminator,
            violations.join(", ")
        )))
    }
}

fn resolve_train(ctx: &Ctx, a: &TrainArgs) -> std::result::Result<TrainConfig, Failure> {
    let mut cfg: TrainConfig = ctx.section("train")?.unwrap_or_else(TrainConfig::desk_scale);
    if let Some(s) = ctx.cli.seed {
        cfg.seed = RngSeed(s);
    }
    let (n0, p0, d0) = match cfg.graph {
        GraphFamily::Er { n, p } => (n, p, 3),
        GraphFamily::Regular { n, d } => (n, 0.2, d),
    };
    let kind = a.graph.unwrap_or(match cfg.graph {
        GraphFamily::Er { .. } => GraphKind::Er,
        GraphFamily::Regular { .. } => GraphKind::Regular,
    });
    let n = a.n.unwrap_or(n0);
    cfg.graph = match kind {
        GraphKind::Er => GraphFamily::Er { n, p: a.p.unwrap_or(p0) },
        GraphKind::Regular => GraphFamily::Regular { n, d: a.d.unwrap_or(d0) },
    };
    if let Some(v) = a.train_noise {
        cfg.train_noise = v;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.n_train = a.n_train.unwrap_or(cfg.n_train);
    cfg.n_val = a.n_val.unwrap_or(cfg.n_val);
    cfg.n_test = a.n_test.unwrap_or(cfg.n_test);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    if let Some(lr) = a.lr {
        cfg.adam.lr = lr;
    }
    if a.layers.is_some() || a.width.is_some() {
        let layers = a.layers.unwrap_or(cfg.model.layer_widths.len());
        let width = a.width.unwrap_or(cfg.model.layer_widths[0]);
        cfg.model = ModelSpec::uniform(cfg.model.family, cfg.model.variant, cfg.model.in_channels, layers, width);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn qap_train(ctx: &mut Ctx, a: &TrainArgs) -> Outcome {
    let cfg = resolve_train(ctx, a)?;
    ctx.echo("qap-train", json!(cfg))?;
    let data = qap::make_dataset(&cfg)?;
    ctx.note("dataset");
    let outcome = qap::train(&cfg, &data, |m| {
        eprintln!(
            "epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        )
    })?;
    ctx.note("training");
    ctx.write("metrics.csv", &qap::metrics_csv(&outcome.metrics))?;
    qap::save_checkpoint(&cfg, &outcome.params, ctx.out("checkpoint.json"))?;
    println!("best epoch {}; checkpoint {}", outcome.best_epoch, ctx.out("checkpoint.json").display());
    if a.eval {
        let rows = qap::evaluate(&cfg, &outcome.params, Decoder::Lap)?;
        ctx.note("evaluation");
        let csv = qap::eval_csv(&rows);
        print!("{csv}");
        ctx.write("eval.csv", &csv)?;
    }
    Ok(())
}

fn load_ckpt(path: &Path) -> std::result::Result<(TrainConfig, wlgnn::tensor::Params), Failure> {
    qap::load_checkpoint(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn qap_eval(ctx: &mut Ctx, a: &EvalArgs) -> Outcome {
    let (cfg, params) = load_ckpt(&a.checkpoint)?;
    let decoder: Decoder = a.decoder.into();
    ctx.echo(
        "qap-eval",
        json!({ "checkpoint": a.checkpoint, "decoder": decoder.to_string(), "baseline": a.baseline, "train": cfg }),
    )?;
    let rows = qap::evaluate(&cfg, &params, decoder)?;
    ctx.note("evaluation");
    let csv = qap::eval_csv(&rows);
    print!("{csv}");
    ctx.write("eval.csv", &csv)?;
    if a.baseline {
        let mut out = String::from("noise,mean_acc,stderr,n_instances\n");
        for &noise in &cfg.eval_noise {
            let accs = qap::baseline_accuracy(&qap::make_test_set(&cfg, noise)?)?;
            let (m, se) = qap::mean_stderr(&accs);
            out.push_str(&format!("{noise},{m:.6},{se:.6},{}\n", accs.len()));
        }
        print!("{out}");
        ctx.write("baseline.csv", &out)?;
    }
    Ok(())
}

fn qap_sweep(ctx: &mut Ctx, a: &SweepArgs) -> Outcome {
    let mut models = Vec::new();
    let mut base: Option<TrainConfig> = None;
    for path in &a.checkpoints {
        let (cfg, params) = load_ckpt(path)?;
        if let Some(b) = &base {
            if b.model != cfg.model || b.graph != cfg.graph {
                return Err(Failure::input(format!("{} uses a different model or graph family", path.display())));
            }
        }
        models.push((cfg.train_noise, params));
        base.get_or_insert(cfg);
    }
    let cfg = base.expect("clap requires one checkpoint");
    let decoder: Decoder = a.decoder.into();
    ctx.echo(
        "qap-sweep",
        json!({ "checkpoints": a.checkpoints, "decoder": decoder.to_string(), "eval": cfg }),
    )?;
    let cells = qap::cross_noise_sweep(&cfg, &models, decoder)?;
    ctx.note("sweep");
    let csv = qap::sweep_csv(&cells);
    print!("{csv}");
    ctx.write("sweep.csv", &csv)
}

fn grad_check(ctx: &mut Ctx, a: &GradArgs) -> Outcome {
    let cfg = GradSuiteConfig {
        points: a.points,
        eps: a.eps,
        seed: RngSeed(ctx.cli.seed.unwrap_or(GradSuiteConfig::default().seed.0)),
    };
    ctx.echo(
        "grad-check",
        json!({ "points": cfg.points, "eps": cfg.eps, "tol": a.tol, "seed": cfg.seed }),
    )?;
    let cases = run_grad_suite(&cfg)?;
    ctx.note("suite");
    for c in &cases {
        println!("{:<9} {:<24} max_rel_error={:.3e}", c.group, c.name, c.max_error);
    }
    ctx.write("grad.csv", &grad_csv(&cases))?;
    let bad: Vec<&str> = cases.iter().filter(|c| !(c.max_error < a.tol)).map(|c| c.name.as_str()).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::violation(format!("gradient mismatch above {}: {}", a.tol, bad.join(", "))))
    }
}

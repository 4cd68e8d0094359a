//! Empirical separating power: which graph pairs a WL test or a family of
//! randomly initialized GNNs can tell apart, and inclusion checks between
//! the resulting verdict sets.

mod fixtures;

pub use fixtures::{c6, rook_4x4, shrikhande, two_c3};

use crate::error::{Error, Result};
use crate::gnn::{ModelSpec, Variant};
use crate::graph::{gen_erdos_renyi, gen_random_regular, GraphTensor, Permutation};
use crate::par;
use crate::rng::RngSeed;
use crate::tensor::Tensor;
use crate::wl::{compare, RefineOptions, WlTest};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const HARD_PAIRS: [&str; 2] = ["c6_2c3", "rook_shrikhande"];

/// Which pairs go into a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub hard_pairs: Vec<String>,
    pub er_pairs: usize,
    pub er_n_min: usize,
    pub er_n_max: usize,
    pub er_p: f64,
    pub regular_pairs: usize,
    pub regular_n: usize,
    pub regular_d: usize,
    /// Isomorphic control pairs per random family; every hard pair also
    /// gets one control built from its first graph.
    pub controls_per_family: usize,
    pub seed: RngSeed,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            hard_pairs: HARD_PAIRS.iter().map(|s| s.to_string()).collect(),
            er_pairs: 50,
            er_n_min: 4,
            er_n_max: 10,
            er_p: 0.4,
            regular_pairs: 20,
            regular_n: 10,
            regular_d: 3,
            controls_per_family: 5,
            seed: RngSeed(2024),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub family: String,
    pub control: bool,
    /// Known verdicts, keyed by discriminator name.
    #[serde(default)]
    pub expected: BTreeMap<String, bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphPair {
    pub id: String,
    pub a: GraphTensor,
    pub b: GraphTensor,
    pub meta: PairMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<GraphPair>,
}

fn hard_pair(name: &str) -> Result<(GraphTensor, GraphTensor, BTreeMap<String, bool>)> {
    match name {
        "c6_2c3" => Ok((
            c6(),
            two_c3(),
            BTreeMap::from([("vwl".to_string(), false), ("fwl2".to_string(), true)]),
        )),
        "rook_shrikhande" => Ok((
            rook_4x4(),
            shrikhande(),
            BTreeMap::from([("vwl".to_string(), false), ("fwl2".to_string(), false)]),
        )),
        _ => Err(Error::input(format!(
            "unknown hard pair {name:?} (known: {})",
            HARD_PAIRS.join(", ")
        ))),
    }
}

fn control(id: String, family: &str, g: &GraphTensor, seed: RngSeed) -> Result<GraphPair> {
    let sigma = Permutation::random(g.n(), &mut seed.stream());
    Ok(GraphPair {
        id,
        a: g.clone(),
        b: g.permute(&sigma)?,
        meta: PairMeta {
            family: family.to_string(),
            control: true,
            expected: BTreeMap::new(),
        },
    })
}

pub fn build_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.er_n_min == 0 || spec.er_n_min > spec.er_n_max {
        return Err(Error::input("invalid ER node range"));
    }
    let mut pairs = Vec::new();
    for name in &spec.hard_pairs {
        let (a, b, expected) = hard_pair(name)?;
        let ctrl_seed = spec.seed.derive_str("hard-control").derive_str(name);
        pairs.push(control(format!("ctrl-{name}"), "hard", &a, ctrl_seed)?);
        pairs.push(GraphPair {
            id: name.clone(),
            a,
            b,
            meta: PairMeta {
                family: "hard".into(),
                control: false,
                expected,
            },
        });
    }

    let er_seed = spec.seed.derive_str("er");
    let mut sizes = er_seed.derive_str("sizes").stream();
    let span = spec.er_n_max - spec.er_n_min + 1;
    let er_graph = |k: usize, side: u64, n: usize| gen_erdos_renyi(n, spec.er_p, er_seed.derive(2 * k as u64 + side));
    for k in 0..spec.er_pairs {
        let n = spec.er_n_min + sizes.below(span);
        pairs.push(GraphPair {
            id: format!("er-{k:03}"),
            a: er_graph(k, 0, n)?,
            b: er_graph(k, 1, n)?,
            meta: PairMeta {
                family: "er".into(),
                control: false,
                expected: BTreeMap::new(),
            },
        });
    }
    for k in 0..spec.controls_per_family {
        let n = spec.er_n_min + sizes.below(span);
        let g = gen_erdos_renyi(n, spec.er_p, er_seed.derive_str("control").derive(k as u64))?;
        pairs.push(control(format!("ctrl-er-{k:03}"), "er", &g, er_seed.derive_str("perm").derive(k as u64))?);
    }

    let reg_seed = spec.seed.derive_str("regular");
    let reg = |s: RngSeed| gen_random_regular(spec.regular_n, spec.regular_d, s);
    for k in 0..spec.regular_pairs {
        let expected = BTreeMap::from([("vwl".to_string(), false)]);
        pairs.push(GraphPair {
            id: format!("reg-{k:03}"),
            a: reg(reg_seed.derive(2 * k as u64))?,
            b: reg(reg_seed.derive(2 * k as u64 + 1))?,
            meta: PairMeta {
                family: "regular".into(),
                control: false,
                expected,
            },
        });
    }
    for k in 0..spec.controls_per_family {
        let g = reg(reg_seed.derive_str("control").derive(k as u64))?;
        pairs.push(control(format!("ctrl-reg-{k:03}"), "regular", &g, reg_seed.derive_str("perm").derive(k as u64))?);
    }
    pairs.sort_by(|x, y| x.id.cmp(&y.id));
    Ok(Corpus { pairs })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GraphPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// Write `dir/<pair id>/{a.json, b.json, meta.json}`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        for p in &self.pairs {
            let d = dir.as_ref().join(&p.id);
            std::fs::create_dir_all(&d)?;
            p.a.save(d.join("a.json"))?;
            p.b.save(d.join("b.json"))?;
            std::fs::write(d.join("meta.json"), serde_json::to_string_pretty(&p.meta)?)?;
        }
        Ok(())
    }

    /// Read a corpus written by [`Corpus::save_dir`]; pairs sorted by id.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut pairs = Vec::new();
        for entry in std::fs::read_dir(dir.as_ref())? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            let id = path.file_name().unwrap().to_string_lossy().into_owned();
            let a = GraphTensor::load(path.join("a.json"))?;
            let b = GraphTensor::load(path.join("b.json"))?;
            let meta: PairMeta = match std::fs::read_to_string(path.join("meta.json")) {
                Ok(text) => serde_json::from_str(&text)?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => PairMeta {
                    family: "custom".into(),
                    control: false,
                    expected: BTreeMap::new(),
                },
                Err(e) => return Err(e.into()),
            };
            pairs.push(GraphPair { id, a, b, meta });
        }
        if pairs.is_empty() {
            return Err(Error::input(format!("no pairs found under {}", dir.as_ref().display())));
        }
        pairs.sort_by(|x, y| x.id.cmp(&y.id));
        Ok(Corpus { pairs })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub pair_id: String,
    pub separated: bool,
    /// Largest relative output gap over seeds; 1 or 0 for WL tests.
    pub gap: f64,
    pub seeds: usize,
}

/// Verdicts of one discriminator on every pair of a corpus, sorted by pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationReport {
    pub discriminator: String,
    pub rows: Vec<ReportRow>,
}

impl SeparationReport {
    pub fn separated(&self, pair_id: &str) -> Option<bool> {
        self.rows.iter().find(|r| r.pair_id == pair_id).map(|r| r.separated)
    }

    pub fn separated_ids(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| r.separated).map(|r| r.pair_id.as_str()).collect()
    }
}

pub const REPORT_HEADER: &str = "pair_id,discriminator,separated,gap,seeds";

/// CSV rows for several reports, sorted by pair then discriminator.
pub fn reports_csv(reports: &[SeparationReport]) -> String {
    let mut rows: Vec<(&str, &str, &ReportRow)> = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(move |row| (row.pair_id.as_str(), r.discriminator.as_str(), row)))
        .collect();
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (id, disc, row) in rows {
        let _ = writeln!(out, "{id},{disc},{},{:.6e},{}", row.separated, row.gap, row.seeds);
    }
    out
}

pub fn wl_separation_report(corpus: &Corpus, test: WlTest, opts: &RefineOptions) -> Result<SeparationReport> {
    let verdicts = par::map_slice(&corpus.pairs, |p| compare(test, &p.a, &p.b, opts));
    let rows = corpus
        .pairs
        .iter()
        .zip(verdicts)
        .map(|(p, v)| {
            let separated = v?.separated;
            Ok(ReportRow {
                pair_id: p.id.clone(),
                separated,
                gap: if separated { 1.0 } else { 0.0 },
                seeds: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeparationReport {
        discriminator: test.to_string(),
        rows,
    })
}

/// `max |a - b| / max(1, |a|, |b|)` over entries (infinity norms).
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

/// Rows of an `[n, d]` output sorted lexicographically, flattened.
fn sorted_rows(t: &Tensor) -> Vec<f64> {
    let d = t.shape()[1];
    let mut rows: Vec<&[f64]> = t.data().chunks(d).collect();
    rows.sort_by(|x, y| {
        x.iter()
            .zip(y.iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.concat()
}

/// Output gap of one model on a pair; node embeddings are compared as
/// sorted row multisets.
pub fn model_gap(spec: &ModelSpec, params: &crate::tensor::Params, a: &GraphTensor, b: &GraphTensor) -> Result<f64> {
    if a.n() != b.n() {
        return Ok(f64::INFINITY);
    }
    let oa = spec.apply_graph(params, a)?;
    let ob = spec.apply_graph(params, b)?;
    Ok(match spec.variant {
        Variant::Invariant => relative_gap(oa.data(), ob.data()),
        Variant::Equivariant => relative_gap(&sorted_rows(&oa), &sorted_rows(&ob)),
    })
}

/// Separation by `seeds` random-weight models built from `template`.
///
/// Seed `s` initializes its model from `run_seed.derive(s)`; the template's
/// `in_channels` is replaced by the corpus channel count.
pub fn gnn_separation_report(
    corpus: &Corpus,
    template: &ModelSpec,
    seeds: usize,
    tol: f64,
    run_seed: RngSeed,
) -> Result<SeparationReport> {
    let first = corpus.pairs.first().ok_or_else(|| Error::input("empty corpus"))?;
    let mut spec = template.clone();
    spec.in_channels = first.a.channels();
    let models = (0..seeds as u64)
        .map(|s| spec.init_params(run_seed.derive(s)))
        .collect::<Result<Vec<_>>>()?;
    let gaps = par::map_slice(&corpus.pairs, |p| {
        models
            .iter()
            .map(|m| model_gap(&spec, m, &p.a, &p.b))
            .try_fold(0.0f64, |acc, g| g.map(|g| acc.max(g)))
    });
    let rows = corpus
        .pairs
        .iter()
        .zip(gaps)
        .map(|(p, g)| {
            let gap = g?;
            Ok(ReportRow {
                pair_id: p.id.clone(),
                separated: gap > tol,
                gap,
                seeds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeparationReport {
        discriminator: format!("{}_{}", spec.family, short_variant(spec.variant)),
        rows,
    })
}

fn short_variant(v: Variant) -> &'static str {
    match v {
        Variant::Invariant => "i",
        Variant::Equivariant => "e",
    }
}

/// Pairs separated by `a` but not by `b`: witnesses against
/// `sep(b) ⊆ sep(a)`. An empty result confirms that `b` separates
/// everything `a` does on this corpus.
pub fn check_inclusion(a: &SeparationReport, b: &SeparationReport) -> Result<Vec<String>> {
    let ids = |r: &SeparationReport| r.rows.iter().map(|x| x.pair_id.clone()).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::input(format!(
            "reports {} and {} cover different pairs",
            a.discriminator, b.discriminator
        )));
    }
    Ok(a.rows
        .iter()
        .zip(&b.rows)
        .filter(|(x, y)| x.separated && !y.separated)
        .map(|(x, _)| x.pair_id.clone())
        .collect())
}

/// `(hits, total)`: how many pairs separated by `reference` are also
/// separated by `candidate`.
pub fn coverage(candidate: &SeparationReport, reference: &SeparationReport) -> Result<(usize, usize)> {
    let missed = check_inclusion(reference, candidate)?.len();
    let total = reference.rows.iter().filter(|r| r.separated).count();
    Ok((total - missed, total))
}

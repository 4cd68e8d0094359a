//! The Weisfeiler-Lehman hierarchy.
//!
//! Every refinement works on 128-bit *history tokens*: a tuple's token after
//! round `t` hashes its token after round `t - 1` together with the sorted
//! tokens of its neighborhood. Tokens never depend on node numbering, so
//! colorings of different graphs can be compared directly; comparing sorted
//! token multisets is equivalent to refining the disjoint union.

mod coloring;
mod hash;
mod iso_type;
mod refine;

pub use coloring::{lex_relabel, Coloring, Signature};
pub use hash::{Token, TokenHasher};
pub use iso_type::{iso_type, TypeId};
pub use refine::{k_fwl, k_wl, vertex_wl, RefineOptions, DEFAULT_ENTRY_CAP};

use crate::error::{Error, Result};
use crate::graph::GraphTensor;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WlTest {
    Vertex,
    Wl(usize),
    Fwl(usize),
}

impl WlTest {
    pub fn run(&self, g: &GraphTensor, opts: &RefineOptions) -> Result<Coloring> {
        match *self {
            WlTest::Vertex => Ok(vertex_wl(g, opts.max_rounds)),
            WlTest::Wl(k) => k_wl(g, k, opts),
            WlTest::Fwl(k) => k_fwl(g, k, opts),
        }
    }
}

impl fmt::Display for WlTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WlTest::Vertex => write!(f, "vwl"),
            WlTest::Wl(k) => write!(f, "wl{k}"),
            WlTest::Fwl(k) => write!(f, "fwl{k}"),
        }
    }
}

impl FromStr for WlTest {
    type Err = Error;

    /// `vwl`, `wl<k>` or `fwl<k>` with `k >= 2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::input(format!("unknown WL test `{s}` (expected vwl, wl<k> or fwl<k>)"));
        if s == "vwl" {
            return Ok(WlTest::Vertex);
        }
        let (ctor, rest): (fn(usize) -> WlTest, &str) = if let Some(r) = s.strip_prefix("fwl") {
            (WlTest::Fwl, r)
        } else if let Some(r) = s.strip_prefix("wl") {
            (WlTest::Wl, r)
        } else {
            return Err(bad());
        };
        let k: usize = rest.parse().map_err(|_| bad())?;
        if k < 2 {
            return Err(bad());
        }
        Ok(ctor(k))
    }
}

/// Outcome of running one test on a pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairVerdict {
    pub separated: bool,
    pub rounds_g: usize,
    pub rounds_h: usize,
}

/// Whether `test` tells `g` and `h` apart.
pub fn distinguishes(test: WlTest, g: &GraphTensor, h: &GraphTensor) -> Result<bool> {
    Ok(compare(test, g, h, &RefineOptions::default())?.separated)
}

pub fn compare(test: WlTest, g: &GraphTensor, h: &GraphTensor, opts: &RefineOptions) -> Result<PairVerdict> {
    let cg = test.run(g, opts)?;
    let ch = test.run(h, opts)?;
    Ok(PairVerdict {
        separated: g.n() != h.n() || cg.invariant_sig() != ch.invariant_sig(),
        rounds_g: cg.round,
        rounds_h: ch.round,
    })
}

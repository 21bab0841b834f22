//! Multiply-add and parameter counts for the three attention mechanisms.
//!
//! Per block, with list length `n`, width `d`, `t` experts and `h` heads:
//!
//! | mechanism | attention core  | extra  | parameters |
//! |-----------|-----------------|--------|------------|
//! | static    | 3nd² + 2n²d     | 0      | 3d²        |
//! | multihead | 3nd² + 2n²d     | nd²    | 4d²        |
//! | dynamic   | 3nd² + 2n²d     | 3td²   | 3td²       |
//!
//! The core covers the three projections, the score matrix and the weighted
//! sum; softmax and scaling are not counted. Totals are multiplied by the
//! number of blocks `b`. [`measured_cost`] obtains the same table by running
//! the real forward code under [`count_madds`](crate::numerics::madd::count_madds).

use crate::dte::{check_heads, dynamic_self_attention, multi_head, self_attention, ExpertBank, StaticAttentionParams};
use crate::error::{RaiseError, Result};
use crate::numerics::madd::count_madds;
use crate::numerics::{glorot_from, Matrix, Parameterized, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Static,
    MultiHead,
    Dynamic,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Static, Mechanism::MultiHead, Mechanism::Dynamic];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Static => "static",
            Mechanism::MultiHead => "multihead",
            Mechanism::Dynamic => "dynamic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostBreakdown {
    pub mechanism: Mechanism,
    /// Shared attention core.
    pub attn_madds: u64,
    /// Multiply-adds beyond the static core.
    pub extra_madds: u64,
    /// Attention parameters (projections, output projection, experts).
    pub params: u64,
}

impl CostBreakdown {
    /// Parameters beyond a static encoder with the same `d` and `b`.
    pub fn extra_params(&self, static_row: &CostBreakdown) -> u64 {
        self.params - static_row.params
    }
}

fn check_sizes(n: usize, d: usize, t: usize, h: usize, b: usize) -> Result<()> {
    if [n, d, t, b].contains(&0) {
        return Err(RaiseError::Config(format!(
            "cost model needs n, d, t, b >= 1 (got n={n}, d={d}, t={t}, b={b})"
        )));
    }
    check_heads(d, h)
}

/// Closed-form counts, one row per [`Mechanism`].
pub fn cost_report(n: usize, d: usize, t: usize, h: usize, b: usize) -> Result<Vec<CostBreakdown>> {
    check_sizes(n, d, t, h, b)?;
    let (n, d, t, b) = (n as u64, d as u64, t as u64, b as u64);
    let core = 3 * n * d * d + 2 * n * n * d;
    let rows = [
        (Mechanism::Static, 0, 3 * d * d),
        (Mechanism::MultiHead, n * d * d, 4 * d * d),
        (Mechanism::Dynamic, 3 * t * d * d, 3 * t * d * d),
    ];
    Ok(rows
        .into_iter()
        .map(|(mechanism, extra, params)| CostBreakdown {
            mechanism,
            attn_madds: b * core,
            extra_madds: b * extra,
            params: b * params,
        })
        .collect())
}

/// Counts from instrumented forward passes over `b` freshly initialized
/// blocks per mechanism.
pub fn measured_cost(n: usize, d: usize, t: usize, h: usize, b: usize, seed: u64) -> Result<Vec<CostBreakdown>> {
    check_sizes(n, d, t, h, b)?;
    let mut rng = SeededRng::new(seed);
    let s = glorot_from(n, d, &mut rng);
    let a = vec![1.0 / t as f64; t];
    let mut totals = [(0u64, 0u64); 3];
    for _ in 0..b {
        let w: Vec<Matrix> = (0..3).map(|_| glorot_from(d, d, &mut rng)).collect();
        let (out, core) = count_madds(|| self_attention(&s, &w[0], &w[1], &w[2]));
        out?;
        totals[0].0 += core;
        totals[0].1 += 3 * (d * d) as u64;

        let mh = StaticAttentionParams::new(d, h, &mut rng)?;
        let (out, all) = count_madds(|| multi_head(&s, &mh));
        out?;
        totals[1].0 += all;
        totals[1].1 += mh.w_q.value.len() as u64 + mh.w_k.value.len() as u64 + mh.w_v.value.len() as u64 + mh.w_o.value.len() as u64;

        let bank = ExpertBank::new("bank", t, d, &mut rng);
        let (out, all) = count_madds(|| dynamic_self_attention(&s, &a, &bank));
        out?;
        totals[2].0 += all;
        totals[2].1 += bank.params().iter().map(|p| p.value.len() as u64).sum::<u64>();
    }
    let core = totals[0].0;
    Ok(Mechanism::ALL
        .into_iter()
        .zip(totals)
        .map(|(mechanism, (all, params))| CostBreakdown {
            mechanism,
            attn_madds: core,
            extra_madds: all - core,
            params,
        })
        .collect())
}

pub fn format_cost_tsv(rows: &[CostBreakdown]) -> String {
    let mut out = String::from("mechanism\tattn_madds\textra_madds\tparams\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.mechanism.name(),
            r.attn_madds,
            r.extra_madds,
            r.params
        ));
    }
    out
}

//! Wall-clock cost of each PSI phase.

use std::fmt::Write as _;
use std::time::Instant;

use contact_core::psi::{build_filter, server_respond, CommutativeKey, PsiClientSession, PsiParams};
use contact_core::CeTcn;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    /// |U| = |S| = n.
    pub n: usize,
    pub overlap: usize,
    pub server_setup_ms: f64,
    pub client_encrypt_ms: f64,
    pub server_respond_ms: f64,
    pub client_finish_ms: f64,
    pub hits: usize,
    /// Hits equal the overlap, allowing for up to 3 filter false positives.
    pub correct: bool,
}

impl BenchRow {
    pub fn server_us_per_element(&self) -> f64 {
        self.server_respond_ms * 1000.0 / self.n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r_squared })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// Server respond time (ms) against |U|.
    pub server_fit: Option<LinearFit>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

pub fn bench_row(n: usize, seed: u64) -> Result<BenchRow, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let overlap = n / 10;
    let server_set: Vec<CeTcn> = (0..n).map(|_| CeTcn::random(&mut rng)).collect();
    let mut client_set: Vec<CeTcn> = server_set[..overlap].to_vec();
    client_set.extend((overlap..n).map(|_| CeTcn::random(&mut rng)));
    let params = PsiParams { min_query: 1, ..PsiParams::default() };

    let t = Instant::now();
    let key = CommutativeKey::generate(&mut rng);
    let filter = build_filter(&key, &server_set);
    let server_setup_ms = ms(t);

    let t = Instant::now();
    let mut session = PsiClientSession::new(&mut rng);
    let query = session.round1(&client_set, params.min_query, &mut rng)?;
    let client_encrypt_ms = ms(t);

    let t = Instant::now();
    let reply = server_respond(&key, &query, &params, &mut rng)?;
    let server_respond_ms = ms(t);

    let t = Instant::now();
    let hits = session.finish(&reply, &filter)?.total_hits();
    let client_finish_ms = ms(t);

    Ok(BenchRow {
        n,
        overlap,
        server_setup_ms,
        client_encrypt_ms,
        server_respond_ms,
        client_finish_ms,
        hits,
        correct: (overlap..=overlap + 3).contains(&hits),
    })
}

pub fn bench_psi(sizes: &[usize], seed: u64) -> Result<BenchTable, HarnessError> {
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(i, n)| bench_row(*n, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<_> = rows.iter().map(|r| (r.n as f64, r.server_respond_ms)).collect();
    Ok(BenchTable { server_fit: fit_line(&points), rows })
}

impl BenchTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>7} {:>7} {:>12} {:>12} {:>12} {:>12} {:>10} {:>6} {:>7}",
            "n", "overlap", "setup_ms", "encrypt_ms", "respond_ms", "finish_ms", "us/elem", "hits", "correct"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>7} {:>7} {:>12.1} {:>12.1} {:>12.1} {:>12.1} {:>10.1} {:>6} {:>7}",
                r.n,
                r.overlap,
                r.server_setup_ms,
                r.client_encrypt_ms,
                r.server_respond_ms,
                r.client_finish_ms,
                r.server_us_per_element(),
                r.hits,
                r.correct
            );
        }
        if let Some(fit) = &self.server_fit {
            let _ = writeln!(
                out,
                "server respond: {:.4} ms/element + {:.2} ms, R^2 = {:.4}",
                fit.slope, fit.intercept, fit.r_squared
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_fits_perfectly() {
        let fit = fit_line(&[(1.0, 3.0), (2.0, 5.0), (4.0, 9.0)]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_line(&[(1.0, 1.0)]).is_none());
        assert!(fit_line(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn r_squared_matches_hand_computation() {
        // Reference values from numpy least squares.
        let fit = fit_line(&[(1.0, 1.0), (2.0, 2.0), (3.0, 2.5), (4.0, 4.5)]).unwrap();
        assert!((fit.slope - 1.1).abs() < 1e-12);
        assert!((fit.intercept + 0.25).abs() < 1e-12);
        assert!((fit.r_squared - 0.930_769_230_769_231).abs() < 1e-9);
    }

    #[test]
    fn empty_size_list_gives_empty_table() {
        let table = bench_psi(&[], 1).unwrap();
        assert!(table.rows.is_empty());
        assert!(table.server_fit.is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn residuals_never_raise_r_squared_above_one(
                slope in -100.0f64..100.0,
                intercept in -100.0f64..100.0,
                noise in prop::collection::vec(-1.0f64..1.0, 3..20),
            ) {
                let points: Vec<(f64, f64)> =
                    noise.iter().enumerate().map(|(i, e)| (i as f64, slope * i as f64 + intercept + e)).collect();
                let fit = fit_line(&points).unwrap();
                prop_assert!(fit.r_squared <= 1.0 + 1e-12);
                let exact: Vec<(f64, f64)> = points.iter().map(|p| (p.0, slope * p.0 + intercept)).collect();
                let fit = fit_line(&exact).unwrap();
                prop_assert!((fit.slope - slope).abs() < 1e-6);
                prop_assert!((fit.intercept - intercept).abs() < 1e-6);
            }
        }
    }
}

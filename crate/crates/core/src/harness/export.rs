//! CSV export of trial-mean curves. Reals are written with 17 significant
//! digits so that they parse back to the same `f64`.

use std::fmt::Write as _;

use super::Aggregate;

pub const CSV_HEADER: &str = "t,mean_loss,mean_grad_norm,min_mean_grad_norm,mu_t,cum_mu,cum_weighted_sq";

/// `{:.16e}`: 17 significant digits, enough for an exact round trip.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn aggregate_csv(agg: &Aggregate) -> String {
    let mut out = String::with_capacity(agg.t.len() * 120);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for i in 0..agg.t.len() {
        let _ = write!(out, "{}", agg.t[i]);
        for v in [
            agg.mean_loss[i],
            agg.mean_grad_norm[i],
            agg.min_mean_grad_norm[i],
            agg.mean_mu[i],
            agg.mean_cum_mu[i],
            agg.mean_cum_weighted_sq[i],
        ] {
            out.push(',');
            out.push_str(&fmt_real(v));
        }
        out.push('\n');
    }
    out
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;

use super::{ModelKind, Trajectory};

/// Agreement between the class-B two-bus model and its reduced model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    /// max |omega_c - omega_g| within the full model (p.u.)
    pub max_converter_machine_gap: f64,
    /// max |omega_g(full) - omega_g(reduced)| (p.u.)
    pub max_machine_deviation: f64,
    /// max |omega_c(full) - omega_g(reduced)| (p.u.)
    pub max_converter_deviation: f64,
    /// Peak |omega_g(reduced) - omega_g(reduced, t=0)| (p.u.)
    pub peak_excursion: f64,
    pub relative_machine_deviation: f64,
    pub relative_converter_deviation: f64,
}

fn interp(ts: &[f64], xs: &[f64], t: f64) -> f64 {
    match ts.binary_search_by(|p| p.total_cmp(&t)) {
        Ok(i) => xs[i],
        Err(0) => xs[0],
        Err(i) if i >= ts.len() => xs[ts.len() - 1],
        Err(i) => {
            let a = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            xs[i - 1] + a * (xs[i] - xs[i - 1])
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Compare frequency trajectories of the same scenario run through the full
/// and the reduced class-B model. The reduced trajectory is interpolated
/// onto the full model's sample times.
pub fn compare_models(full: &Trajectory, reduced: &Trajectory, sys: &SystemParams) -> Result<ModelComparison> {
    if full.model != ModelKind::ClassBFull || reduced.model != ModelKind::ClassBReduced {
        return Err(Error::Domain(format!(
            "expected class_b_full and class_b_reduced trajectories, got {} and {}",
            full.model.name(),
            reduced.model.name()
        )));
    }
    let v = full.series("v_dc").expect("two-bus column");
    let wg = full.series("omega_g_dev").expect("two-bus column");
    let tr = reduced.times();
    let wr = reduced.series("omega_g_dev").expect("reduced column");
    let w0 = wr[0];
    let k = sys.converter.k_m / sys.machine.omega_star;
    let t_end = tr[tr.len() - 1];
    let (mut gap, mut dev_g, mut dev_c) = (0.0f64, 0.0f64, 0.0f64);
    for (s, (&vd, &g)) in full.samples.iter().zip(v.iter().zip(&wg)) {
        if s.t > t_end {
            break;
        }
        let wc = k * vd - 1.0;
        let r = interp(&tr, &wr, s.t);
        gap = gap.max((wc - g).abs());
        dev_g = dev_g.max((g - r).abs());
        dev_c = dev_c.max((wc - r).abs());
    }
    let peak = wr.iter().map(|x| (x - w0).abs()).fold(0.0, f64::max);
    Ok(ModelComparison {
        max_converter_machine_gap: gap,
        max_machine_deviation: dev_g,
        max_converter_deviation: dev_c,
        peak_excursion: peak,
        relative_machine_deviation: ratio(dev_g, peak),
        relative_converter_deviation: ratio(dev_c, peak),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_linear_and_clamped() {
        let ts = [0.0, 1.0, 3.0];
        let xs = [0.0, 2.0, 6.0];
        assert_eq!(interp(&ts, &xs, 0.5), 1.0);
        assert_eq!(interp(&ts, &xs, 2.0), 4.0);
        assert_eq!(interp(&ts, &xs, -1.0), 0.0);
        assert_eq!(interp(&ts, &xs, 9.0), 6.0);
        assert_eq!(ratio(0.0, 0.0), 0.0);
    }
}

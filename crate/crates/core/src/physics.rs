//! Transport quantities: mean squared displacement, Einstein diffusivity,
//! Nernst–Einstein conductivity and the log10 target convention.

use std::io::Write;

use crate::dataset::{SpeciesCode, Structure, Trajectory};
use crate::{Error, Result};

/// MSD sampled at increasing lag times starting from 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MsdCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MsdCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn scaled(&self, c: f64) -> MsdCurve {
        MsdCurve {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "msd"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            wtr.write_record([t.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Time origins used when averaging squared displacements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MsdOrigins {
    /// `⟨‖p(t) − p(0)‖²⟩` over ions only.
    #[default]
    Single,
    /// Additionally averaged over every frame as a time origin. Lower variance
    /// for stationary processes; not the textbook single-origin definition.
    Every,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NernstEinsteinParams {
    pub number_density: f64,
    pub charge: f64,
    pub k_b: f64,
    pub temperature: f64,
}

impl NernstEinsteinParams {
    pub fn unit(temperature: f64) -> Self {
        NernstEinsteinParams {
            number_density: 1.0,
            charge: 1.0,
            k_b: 1.0,
            temperature,
        }
    }
}

fn lag_frames(n_frames: usize, k_points: usize) -> Result<Vec<usize>> {
    if k_points < 2 || k_points > n_frames {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= k_points <= {n_frames} frames, got {k_points}"
        )));
    }
    let last = (n_frames - 1) as f64;
    let mut lags: Vec<usize> = (0..k_points)
        .map(|j| (j as f64 * last / (k_points - 1) as f64).round() as usize)
        .collect();
    lags.dedup();
    Ok(lags)
}

/// Single-origin MSD of species `s` at `k_points` evenly spaced lags.
pub fn msd(tr: &Trajectory, st: &Structure, s: SpeciesCode, k_points: usize) -> Result<MsdCurve> {
    msd_with(tr, st, s, k_points, MsdOrigins::Single)
}

pub fn msd_with(
    tr: &Trajectory,
    st: &Structure,
    s: SpeciesCode,
    k_points: usize,
    origins: MsdOrigins,
) -> Result<MsdCurve> {
    let ions = st.atoms_of(s);
    if ions.is_empty() {
        return Err(Error::SpeciesAbsent(s));
    }
    if tr.n_atoms() != st.n_atoms() {
        return Err(Error::DimensionMismatch {
            context: "msd (trajectory atoms)",
            expected: st.n_atoms(),
            actual: tr.n_atoms(),
        });
    }
    let n_frames = tr.n_frames();
    let lags = lag_frames(n_frames, k_points)?;
    let sq = |a: usize, b: usize, ion: usize| -> f64 {
        let (p, q) = (tr.frames[a][ion], tr.frames[b][ion]);
        (0..3).map(|d| (p[d] - q[d]) * (p[d] - q[d])).sum()
    };
    let values = lags
        .iter()
        .map(|&lag| {
            let n_orig = match origins {
                MsdOrigins::Single => 1,
                MsdOrigins::Every => n_frames - lag,
            };
            let mut total = 0.0;
            for &ion in &ions {
                for o in 0..n_orig {
                    total += sq(o + lag, o, ion);
                }
            }
            total / (ions.len() * n_orig) as f64
        })
        .collect();
    Ok(MsdCurve {
        times: lags.iter().map(|&l| l as f64 * tr.dt).collect(),
        values,
    })
}

/// Mean squared displacement of species `s` between the first and last frame.
pub fn final_msd(tr: &Trajectory, st: &Structure, s: SpeciesCode) -> Result<f64> {
    let curve = msd(tr, st, s, 2)?;
    Ok(curve.values[curve.len() - 1])
}

/// Slope of MSD against time over the trailing `fit_window` fraction of the
/// curve's points, divided by 6.
pub fn einstein_diffusivity(curve: &MsdCurve, fit_window: f64) -> Result<f64> {
    if !(fit_window > 0.0 && fit_window <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fit window must lie in (0, 1], got {fit_window}"
        )));
    }
    let k = curve.len();
    let start = ((k as f64) * (1.0 - fit_window)).floor() as usize;
    let (t, y) = (&curve.times[start.min(k)..], &curve.values[start.min(k)..]);
    if t.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fit window holds {} points, need at least 2",
            t.len()
        )));
    }
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|t| (t - tm) * (t - tm)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(t, y)| (t - tm) * (y - ym)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("fit window has no time spread".into()));
    }
    Ok(sxy / sxx / 6.0)
}

/// `σ = n q² D / (k_B T)`.
pub fn nernst_einstein(d: f64, p: &NernstEinsteinParams) -> f64 {
    p.number_density * p.charge * p.charge * d / (p.k_b * p.temperature)
}

/// Inverse of [`nernst_einstein`]: `D = σ k_B T / (n q²)`.
pub fn diffusivity_from_conductivity(sigma: f64, p: &NernstEinsteinParams) -> f64 {
    sigma * p.k_b * p.temperature / (p.number_density * p.charge * p.charge)
}

pub fn to_log10(value: f64) -> Result<f64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "log10 target needs a positive finite value, got {value}"
        )));
    }
    Ok(value.log10())
}

/// [`to_log10`] with the sample id attached to the error.
pub fn to_log10_for(id: &str, value: f64) -> Result<f64> {
    to_log10(value).map_err(|e| Error::Sample {
        id: id.to_string(),
        reason: e.to_string(),
    })
}

pub fn from_log10(v: f64) -> f64 {
    10f64.powf(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Edge;

    fn line_structure(species: Vec<SpeciesCode>) -> Structure {
        let n = species.len();
        let mut edges = Vec::new();
        for i in 0..n - 1 {
            edges.push(Edge { k: i, l: i + 1, features: vec![] });
            edges.push(Edge { k: i + 1, l: i, features: vec![] });
        }
        Structure {
            positions: (0..n).map(|i| [i as f64, 0.0, 0.0]).collect(),
            species,
            node_features: vec![vec![]; n],
            edges,
        }
    }

    fn moving(st: &Structure, v: [f64; 3], frames: usize, dt: f64) -> Trajectory {
        Trajectory {
            dt,
            frames: (0..frames)
                .map(|f| {
                    let t = f as f64 * dt;
                    st.positions
                        .iter()
                        .map(|p| [p[0] + v[0] * t, p[1] + v[1] * t, p[2] + v[2] * t])
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn stationary_ions_have_zero_msd() {
        let st = line_structure(vec![0, 1, 0]);
        let tr = moving(&st, [0.0; 3], 10, 0.5);
        let c = msd(&tr, &st, 0, 5).unwrap();
        assert_eq!(c.values, vec![0.0; 5]);
        assert_eq!(c.times, vec![0.0, 1.0, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn ballistic_motion_is_quadratic() {
        let st = line_structure(vec![0, 1]);
        let v = [1.0, 2.0, -2.0];
        let tr = moving(&st, v, 21, 0.1);
        let c = msd(&tr, &st, 0, 21).unwrap();
        for (t, m) in c.times.iter().zip(&c.values) {
            assert!((m - 9.0 * t * t).abs() < 1e-12);
        }
    }

    #[test]
    fn absent_species_errors() {
        let st = line_structure(vec![1, 1]);
        let tr = moving(&st, [0.0; 3], 3, 1.0);
        assert!(matches!(msd(&tr, &st, 0, 2), Err(Error::SpeciesAbsent(0))));
        let st = line_structure(vec![0, 1]);
        assert!(msd(&tr, &st, 0, 4).is_err());
    }

    #[test]
    fn translation_and_relabeling_invariance() {
        let st = line_structure(vec![0, 0, 1]);
        let mut tr = moving(&st, [0.0; 3], 4, 1.0);
        tr.frames[1][0][0] += 1.0;
        tr.frames[2][1][1] -= 2.0;
        tr.frames[3][0][2] += 0.5;
        let base = msd(&tr, &st, 0, 4).unwrap();
        let mut shifted = tr.clone();
        for f in &mut shifted.frames {
            for p in f.iter_mut() {
                p[0] += 7.0;
                p[2] -= 3.0;
            }
        }
        let mut swapped = tr.clone();
        for f in &mut swapped.frames {
            f.swap(0, 1);
        }
        for other in [msd(&shifted, &st, 0, 4).unwrap(), msd(&swapped, &st, 0, 4).unwrap()] {
            for (a, b) in base.values.iter().zip(&other.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn einstein_on_exact_lines() {
        let times: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let curve = MsdCurve {
            values: times.iter().map(|t| 12.0 * t).collect(),
            times: times.clone(),
        };
        assert!((einstein_diffusivity(&curve, 0.5).unwrap() - 2.0).abs() < 1e-12);
        let scaled = curve.scaled(3.5);
        assert!((einstein_diffusivity(&scaled, 0.5).unwrap() - 7.0).abs() < 1e-12);
        let zero = MsdCurve { values: vec![0.0; 11], times };
        assert_eq!(einstein_diffusivity(&zero, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_window_errors() {
        let curve = MsdCurve { times: vec![0.0, 1.0, 2.0], values: vec![0.0, 1.0, 2.0] };
        assert!(einstein_diffusivity(&curve, 0.2).is_err());
        assert!(einstein_diffusivity(&curve, 0.0).is_err());
    }

    #[test]
    fn nernst_einstein_cases() {
        let unit = NernstEinsteinParams::unit(1.0);
        assert_eq!(nernst_einstein(0.0, &unit), 0.0);
        assert_eq!(nernst_einstein(3.0, &unit), 3.0);
        let p = NernstEinsteinParams { number_density: 0.03, charge: 2.0, k_b: 8.617e-5, temperature: 900.0 };
        let sigma = nernst_einstein(1.7e-6, &p);
        let back = nernst_einstein(diffusivity_from_conductivity(sigma, &p), &p);
        assert!(((back - sigma) / sigma).abs() <= 1e-12);
    }

    #[test]
    fn nernst_einstein_scaling() {
        let p = NernstEinsteinParams { number_density: 2.0, charge: 1.5, k_b: 1.0, temperature: 4.0 };
        let base = nernst_einstein(0.3, &p);
        let rel = |a: f64, b: f64| ((a - b) / b).abs() < 1e-14;
        assert!(rel(nernst_einstein(0.9, &p), 3.0 * base));
        assert!(rel(nernst_einstein(0.3, &NernstEinsteinParams { number_density: 6.0, ..p }), 3.0 * base));
        assert!(rel(nernst_einstein(0.3, &NernstEinsteinParams { charge: 4.5, ..p }), 9.0 * base));
        assert!(rel(nernst_einstein(0.3, &NernstEinsteinParams { temperature: 12.0, ..p }), base / 3.0));
    }

    #[test]
    fn log10_round_trip() {
        assert_eq!(to_log10(1.0).unwrap(), 0.0);
        assert_eq!(to_log10(1000.0).unwrap(), 3.0);
        let v = from_log10(to_log10(7.2).unwrap());
        assert!(((v - 7.2) / 7.2).abs() <= 1e-14);
        let err = to_log10_for("m007_T600", 0.0).unwrap_err().to_string();
        assert!(err.contains("m007_T600"));
    }

    #[test]
    fn msd_csv_export() {
        let curve = MsdCurve { times: vec![0.0, 0.5], values: vec![0.0, 2.25] };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,msd\n0,0\n0.5,2.25\n");
    }
}

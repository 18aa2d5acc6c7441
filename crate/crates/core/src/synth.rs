//! Synthetic "MD-lite" materials: mobile ions hop on a cubic lattice with
//! Arrhenius rates while framework atoms vibrate about fixed sites. Every
//! transport coefficient of the generator is known in closed form.
//!
//! Energies use `k_B = 1`, so barriers are expressed in temperature units.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Dataset, DatasetKind, Edge, Sample, SpeciesCode, Split, Structure, TargetKind, Trajectory,
    TransportTarget,
};
use crate::physics::{self, MsdOrigins, NernstEinsteinParams};
use crate::{Error, Result};

/// Species code of the mobile ion.
pub const TARGET_SPECIES: SpeciesCode = 0;
/// Number of species codes the generator emits (mobile ion + two framework species).
pub const N_SPECIES: usize = 3;
/// Node features: barrier, species one-hot, coordination / 6.
pub const NODE_DIM: usize = 2 + N_SPECIES;
/// Edge features: bond length, barrier difference.
pub const EDGE_DIM: usize = 2;
/// Barriers enter node and edge features in units of 1000 (kilo-kelvin).
pub const BARRIER_FEATURE_SCALE: f64 = 1e-3;
/// Framework vibration amplitude as a fraction of the lattice spacing.
pub const VIBRATION_STD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub n_atoms: usize,
    pub n_target_ions: usize,
    pub barrier_base: f64,
    pub barrier_spread: f64,
    pub attempt_rate: f64,
    pub lattice_spacing: f64,
    pub seed: u64,
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_atoms < 2 {
            return bad(format!("n_atoms must be at least 2, got {}", self.n_atoms));
        }
        if self.n_target_ions < 1 || self.n_target_ions > self.n_atoms {
            return bad(format!(
                "n_target_ions must lie in [1, {}], got {}",
                self.n_atoms, self.n_target_ions
            ));
        }
        if !(self.barrier_base > 0.0) || !self.barrier_base.is_finite() {
            return bad(format!("barrier_base must be positive, got {}", self.barrier_base));
        }
        if !(self.barrier_spread >= 0.0) || !self.barrier_spread.is_finite() {
            return bad(format!("barrier_spread must be non-negative, got {}", self.barrier_spread));
        }
        if !(self.attempt_rate > 0.0) || !self.attempt_rate.is_finite() {
            return bad(format!("attempt_rate must be positive, got {}", self.attempt_rate));
        }
        if !(self.lattice_spacing > 0.0) || !self.lattice_spacing.is_finite() {
            return bad(format!("lattice_spacing must be positive, got {}", self.lattice_spacing));
        }
        Ok(())
    }

    /// Edge length of the smallest cube holding `n_atoms` sites.
    pub fn cube_side(&self) -> usize {
        let mut s = 1;
        while s * s * s < self.n_atoms {
            s += 1;
        }
        s
    }
}

/// Deterministic layout of one material: which atoms are mobile ions and
/// their barriers.
struct Layout {
    species: Vec<SpeciesCode>,
    /// Barrier of each atom; `None` for framework atoms.
    barriers: Vec<Option<f64>>,
}

fn layout(spec: &MaterialSpec) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_atoms;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_target = vec![false; n];
    for &i in &order[..spec.n_target_ions] {
        is_target[i] = true;
    }
    let mut species = Vec::with_capacity(n);
    let mut barriers = Vec::with_capacity(n);
    for &target in &is_target {
        if target {
            species.push(TARGET_SPECIES);
            let u = if spec.barrier_spread > 0.0 {
                rng.random_range(-0.5..=0.5) * spec.barrier_spread
            } else {
                0.0
            };
            barriers.push(Some(spec.barrier_base + u));
        } else {
            species.push(rng.random_range(1..N_SPECIES as SpeciesCode));
            barriers.push(None);
        }
    }
    Layout { species, barriers }
}

fn site(i: usize, side: usize) -> [usize; 3] {
    [i % side, (i / side) % side, i / (side * side)]
}

/// Places atoms on a truncated cubic lattice with 6-neighbor bonds.
pub fn gen_material(spec: &MaterialSpec) -> Result<Structure> {
    spec.validate()?;
    let Layout { species, barriers } = layout(spec);
    let n = spec.n_atoms;
    let side = spec.cube_side();
    let a = spec.lattice_spacing;
    let sites: Vec<[usize; 3]> = (0..n).map(|i| site(i, side)).collect();
    let positions: Vec<[f64; 3]> = sites
        .iter()
        .map(|s| [s[0] as f64 * a, s[1] as f64 * a, s[2] as f64 * a])
        .collect();
    let index = |c: [usize; 3]| c[0] + side * (c[1] + side * c[2]);
    let feat_barrier = |i: usize| barriers[i].unwrap_or(0.0) * BARRIER_FEATURE_SCALE;

    let mut edges = Vec::new();
    for (k, c) in sites.iter().enumerate() {
        for axis in 0..3 {
            for step in [-1isize, 1] {
                let coord = c[axis] as isize + step;
                if coord < 0 || coord >= side as isize {
                    continue;
                }
                let mut nc = *c;
                nc[axis] = coord as usize;
                let l = index(nc);
                if l < n {
                    edges.push(Edge {
                        k,
                        l,
                        features: vec![a, feat_barrier(l) - feat_barrier(k)],
                    });
                }
            }
        }
    }
    let mut degree = vec![0usize; n];
    for e in &edges {
        degree[e.k] += 1;
    }
    let node_features = (0..n)
        .map(|i| {
            let mut f = vec![0.0; NODE_DIM];
            f[0] = feat_barrier(i);
            f[1 + species[i] as usize] = 1.0;
            f[NODE_DIM - 1] = degree[i] as f64 / 6.0;
            f
        })
        .collect();
    Ok(Structure {
        positions,
        species,
        node_features,
        edges,
    })
}

/// Barriers of the mobile ions of `spec`, as `(atom index, barrier)`.
pub fn ion_barriers(spec: &MaterialSpec) -> Result<Vec<(usize, f64)>> {
    spec.validate()?;
    Ok(layout(spec)
        .barriers
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|b| (i, b)))
        .collect())
}

/// Per-step, per-axis, per-direction hop probability
/// `min(0.5, ν·exp(−E/T)·dt)`.
pub fn hop_probability(attempt_rate: f64, barrier: f64, temperature: f64, dt: f64) -> Result<f64> {
    let raw = attempt_rate * (-barrier / temperature).exp() * dt;
    if raw.is_nan() || raw < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "hop probability is undefined for ν={attempt_rate}, E={barrier}, T={temperature}, dt={dt}"
        )));
    }
    Ok(raw.min(0.5))
}

/// Einstein diffusivity of the hop process.
///
/// One step moves an axis by `±a` with probability `p` each, so the per-axis
/// step variance is `2pa²`. Over `t/dt` independent steps the per-axis MSD is
/// `2pa²·t/dt = 2·D·t`, giving `D = p·a²/dt` and a 3D MSD of `6·D·t`.
pub fn analytic_diffusivity(spec: &MaterialSpec, barrier: f64, temperature: f64, dt: f64) -> Result<f64> {
    if !(temperature > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature and dt must be positive, got T={temperature}, dt={dt}"
        )));
    }
    let p = hop_probability(spec.attempt_rate, barrier, temperature, dt)?;
    Ok(p * spec.lattice_spacing * spec.lattice_spacing / dt)
}

/// Simulates `n_frames` frames, one per step of length `dt`.
pub fn simulate_trajectory(
    st: &Structure,
    spec: &MaterialSpec,
    temperature: f64,
    n_frames: usize,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    simulate_trajectory_strided(st, spec, temperature, n_frames, dt, 1, seed)
}

/// Like [`simulate_trajectory`] but records every `stride`-th step, so the
/// returned frames are `stride·dt` apart and span `(n_frames − 1)·stride` steps.
pub fn simulate_trajectory_strided(
    st: &Structure,
    spec: &MaterialSpec,
    temperature: f64,
    n_frames: usize,
    dt: f64,
    stride: usize,
    seed: u64,
) -> Result<Trajectory> {
    if !(temperature > 0.0) || !(dt > 0.0) || n_frames < 2 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "need T > 0, dt > 0, n_frames >= 2, stride >= 1; got T={temperature}, dt={dt}, \
             n_frames={n_frames}, stride={stride}"
        )));
    }
    // The attempt rate may be zero here to freeze the ions.
    let check = MaterialSpec {
        attempt_rate: if spec.attempt_rate == 0.0 { 1.0 } else { spec.attempt_rate },
        ..spec.clone()
    };
    check.validate()?;
    let Layout { species, barriers } = layout(spec);
    if st.n_atoms() != spec.n_atoms || st.species != species {
        return Err(Error::InvalidArgument(
            "structure does not match the material spec".into(),
        ));
    }
    let ions: Vec<(usize, f64)> = barriers
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|b| (i, b)))
        .collect();
    let p_hop = ions
        .iter()
        .map(|&(_, b)| hop_probability(spec.attempt_rate, b, temperature, dt))
        .collect::<Result<Vec<f64>>>()?;
    let a = spec.lattice_spacing;
    let vibration = Normal::new(0.0, VIBRATION_STD * a).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut current = st.positions.clone();
    let mut frames = Vec::with_capacity(n_frames);
    let record = |current: &[[f64; 3]], rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
        current
            .iter()
            .zip(&barriers)
            .map(|(p, b)| match b {
                Some(_) => *p,
                None => [
                    p[0] + vibration.sample(rng),
                    p[1] + vibration.sample(rng),
                    p[2] + vibration.sample(rng),
                ],
            })
            .collect()
    };
    frames.push(record(&current, &mut rng));
    for _ in 1..n_frames {
        for _ in 0..stride {
            for (&(atom, _), &p) in ions.iter().zip(&p_hop) {
                for x in current[atom].iter_mut() {
                    let u: f64 = rng.random();
                    if u < p {
                        *x += a;
                    } else if u < 2.0 * p {
                        *x -= a;
                    }
                }
            }
        }
        frames.push(record(&current, &mut rng));
    }
    Ok(Trajectory {
        dt: dt * stride as f64,
        frames,
    })
}

/// Everything needed to generate one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecipe {
    pub kind: DatasetKind,
    pub target: TargetKind,
    pub n_materials: usize,
    /// Per-material seeds are derived from `seed`; the template's own seed is ignored.
    pub template: MaterialSpec,
    /// Width of the uniform per-material offset added to the template's
    /// `barrier_base`, so materials differ in more than their ion draws.
    pub material_barrier_spread: f64,
    pub temperatures: Vec<f64>,
    pub n_frames: usize,
    pub dt: f64,
    pub stride: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

/// SplitMix64 finalizer; used to derive independent child seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Material seeds of a recipe, in material order.
pub fn material_seeds(recipe: &DatasetRecipe) -> Vec<u64> {
    (0..recipe.n_materials as u64)
        .map(|i| mix_seed(recipe.seed, 2 * i + 1))
        .collect()
}

fn target_value(
    kind: TargetKind,
    id: &str,
    tr: &Trajectory,
    st: &Structure,
    spec: &MaterialSpec,
    temperature: f64,
) -> Result<f64> {
    let value = match kind {
        TargetKind::MsdFinal => physics::final_msd(tr, st, TARGET_SPECIES)?,
        TargetKind::Diffusivity | TargetKind::Conductivity => {
            // Origin averaging, and dropping lags past half the run where few
            // origins remain, keeps short runs from producing bad slopes.
            let mut curve = physics::msd_with(tr, st, TARGET_SPECIES, tr.n_frames(), MsdOrigins::Every)?;
            let half = curve.len().div_ceil(2).max(2);
            curve.times.truncate(half);
            curve.values.truncate(half);
            let d = physics::einstein_diffusivity(&curve, 0.5)?;
            if kind == TargetKind::Diffusivity {
                d
            } else {
                let volume = (spec.cube_side() as f64 * spec.lattice_spacing).powi(3);
                let params = NernstEinsteinParams {
                    number_density: spec.n_target_ions as f64 / volume,
                    ..NernstEinsteinParams::unit(temperature)
                };
                physics::nernst_einstein(d, &params)
            }
        }
    };
    physics::to_log10_for(id, value)
}

/// Generates `n_materials × |temperatures|` samples, split by material.
///
/// Trajectories are simulated for every sample to compute its target. They are
/// kept only for training samples of trajectory-based datasets.
pub fn make_dataset(recipe: &DatasetRecipe) -> Result<Dataset> {
    make_dataset_with_seeds(recipe, &material_seeds(recipe))
}

/// [`make_dataset`] with explicit per-material seeds.
pub fn make_dataset_with_seeds(recipe: &DatasetRecipe, seeds: &[u64]) -> Result<Dataset> {
    if seeds.len() != recipe.n_materials {
        return Err(Error::DimensionMismatch {
            context: "material seeds",
            expected: recipe.n_materials,
            actual: seeds.len(),
        });
    }
    if recipe.n_materials < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 materials, got {}",
            recipe.n_materials
        )));
    }
    if recipe.temperatures.is_empty() || recipe.temperatures.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("temperatures must be nonempty and positive".into()));
    }
    if !(recipe.test_fraction >= 0.0 && recipe.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in [0, 1), got {}",
            recipe.test_fraction
        )));
    }
    let lowest_base = recipe.template.barrier_base - 0.5 * recipe.material_barrier_spread;
    if !(recipe.material_barrier_spread >= 0.0) || !(lowest_base > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "material barrier spread must be non-negative and keep barrier_base positive, got {}",
            recipe.material_barrier_spread
        )));
    }
    let unique: HashSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(Error::InvalidArgument("duplicate material seeds".into()));
    }

    let n = recipe.n_materials;
    // A zero fraction leaves the test split empty; validation reports it.
    let n_test = ((n as f64 * recipe.test_fraction).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(recipe.seed, 0)));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }

    let mut samples = Vec::with_capacity(n * recipe.temperatures.len());
    for (m, &mseed) in seeds.iter().enumerate() {
        let offset = if recipe.material_barrier_spread > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mseed, 0));
            rng.random_range(-0.5..=0.5) * recipe.material_barrier_spread
        } else {
            0.0
        };
        let spec = MaterialSpec {
            seed: mseed,
            barrier_base: recipe.template.barrier_base + offset,
            ..recipe.template.clone()
        };
        let st = gen_material(&spec)?;
        let split = if is_test[m] { Split::Test } else { Split::Train };
        for (ti, &temperature) in recipe.temperatures.iter().enumerate() {
            let id = format!("m{m:03}_T{temperature}");
            let tseed = mix_seed(mseed, ti as u64 + 1);
            let tr = simulate_trajectory_strided(
                &st,
                &spec,
                temperature,
                recipe.n_frames,
                recipe.dt,
                recipe.stride,
                tseed,
            )?;
            let value_log10 = target_value(recipe.target, &id, &tr, &st, &spec, temperature)?;
            let keep = recipe.kind == DatasetKind::TrajectoryBased && split == Split::Train;
            samples.push(Sample {
                id,
                split,
                structure: st.clone(),
                trajectory: keep.then_some(tr),
                temperature,
                target: TransportTarget {
                    kind: recipe.target,
                    species: TARGET_SPECIES,
                    value_log10,
                },
            });
        }
    }
    let t_norm = recipe.temperatures.iter().copied().fold(f64::MIN, f64::max);
    Ok(Dataset {
        kind: recipe.kind,
        samples,
        t_norm,
    })
}

//! Input embeddings.
//!
//! * Trajectories become band-pooled Fourier magnitudes of the mobile ions'
//!   displacement series plus one log-MSD coordinate.
//! * Structures become neighbor-averaged `[node; edge; neighbor node]`
//!   vectors, restricted to the mobile species, expanded to third order and
//!   mean-pooled over ions.
//! * Temperatures become `[1, T/T_m, (T/T_m)², (T/T_m)³]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SpeciesCode, Split, Structure, Trajectory};
use crate::numerics::DenseMatrix;
use crate::physics;
use crate::{Error, Result};

pub const DEFAULT_N_BANDS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEmbedding {
    pub vec: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureTemperatureEmbedding {
    pub vec: Vec<f64>,
}

/// Embedding switches shared by every sample of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedOptions {
    pub n_bands: usize,
    /// Third-order expansion of structure and temperature features. When
    /// off, only the linear terms `[E_a]` and `[1, T/T_m]` are kept.
    pub polynomial: bool,
    /// Append `log10(1 + final MSD)` to the trajectory embedding.
    pub msd_coordinate: bool,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            n_bands: DEFAULT_N_BANDS,
            polynomial: true,
            msd_coordinate: true,
        }
    }
}

/// Bin boundaries of `n_bands` log-spaced bands over bins `1..=n_bins`.
///
/// Returns `n_bands + 1` increasing edges; band `j` is `edges[j]..edges[j+1]`.
/// Every band holds at least one bin.
pub fn band_edges(n_bins: usize, n_bands: usize) -> Vec<usize> {
    assert!(n_bands >= 1 && n_bins >= n_bands, "need n_bins >= n_bands >= 1");
    let mut edges = vec![1usize];
    for j in 1..n_bands {
        let raw = (n_bins as f64).powf(j as f64 / n_bands as f64);
        let prev = edges[j - 1];
        let room = n_bins + 1 - (n_bands - j);
        edges.push(((raw - 1e-9).ceil() as usize).max(prev + 1).min(room));
    }
    edges.push(n_bins + 1);
    edges
}

/// Spectral embedding of the species-`s` ions of a trajectory.
pub fn trajectory_embedding(
    tr: &Trajectory,
    st: &Structure,
    s: SpeciesCode,
    n_bands: usize,
) -> Result<TrajectoryEmbedding> {
    trajectory_embedding_with(tr, st, s, n_bands, true)
}

pub fn trajectory_embedding_with(
    tr: &Trajectory,
    st: &Structure,
    s: SpeciesCode,
    n_bands: usize,
    msd_coordinate: bool,
) -> Result<TrajectoryEmbedding> {
    let ions = st.atoms_of(s);
    if ions.is_empty() {
        return Err(Error::SpeciesAbsent(s));
    }
    let len = tr.n_frames();
    if n_bands == 0 || len < 2 * n_bands {
        return Err(Error::InvalidArgument(format!(
            "trajectory of {len} frames is too short for {n_bands} bands"
        )));
    }
    if tr.n_atoms() != st.n_atoms() {
        return Err(Error::DimensionMismatch {
            context: "trajectory_embedding (atoms)",
            expected: st.n_atoms(),
            actual: tr.n_atoms(),
        });
    }
    let n_bins = len / 2;
    let edges = band_edges(n_bins, n_bands);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut bands = vec![0.0; n_bands];
    for &ion in &ions {
        for axis in 0..3 {
            for (b, d) in buf.iter_mut().zip(tr.displacement(ion, axis)) {
                *b = Complex::new(d, 0.0);
            }
            fft.process(&mut buf);
            for (j, w) in edges.windows(2).enumerate() {
                let sum: f64 = buf[w[0]..w[1]].iter().map(|c| c.norm()).sum();
                bands[j] += sum / (len * (w[1] - w[0])) as f64;
            }
        }
    }
    let norm = (3 * ions.len()) as f64;
    let mut vec: Vec<f64> = bands.into_iter().map(|b| b / norm).collect();
    if msd_coordinate {
        vec.push((1.0 + physics::final_msd(tr, st, s)?).log10());
    }
    Ok(TrajectoryEmbedding { vec })
}

/// Row `k` is the mean over neighbors `l` of `[n_k; m_kl; n_l]`.
pub fn atom_embedding(st: &Structure) -> Result<DenseMatrix> {
    let n = st.n_atoms();
    let (d_n, d_e) = (st.node_dim(), st.edge_dim());
    let d_a = 2 * d_n + d_e;
    let mut out = DenseMatrix::zeros(n, d_a);
    let mut count = vec![0usize; n];
    for e in &st.edges {
        if e.k >= n || e.l >= n || e.features.len() != d_e {
            return Err(Error::InvalidArgument(format!(
                "malformed edge ({}, {})",
                e.k, e.l
            )));
        }
        count[e.k] += 1;
        let row = out.row_mut(e.k);
        let (own, rest) = row.split_at_mut(d_n);
        let (edge, nbr) = rest.split_at_mut(d_e);
        for (o, v) in own.iter_mut().zip(&st.node_features[e.k]) {
            *o += v;
        }
        for (o, v) in edge.iter_mut().zip(&e.features) {
            *o += v;
        }
        for (o, v) in nbr.iter_mut().zip(&st.node_features[e.l]) {
            *o += v;
        }
    }
    for (k, &c) in count.iter().enumerate() {
        if c == 0 {
            return Err(Error::IsolatedAtom(k));
        }
        for v in out.row_mut(k) {
            *v /= c as f64;
        }
    }
    Ok(out)
}

/// Rows of `ea` belonging to species `s`, in atom order.
pub fn select_species(ea: &DenseMatrix, st: &Structure, s: SpeciesCode) -> Result<DenseMatrix> {
    let idx = st.atoms_of(s);
    if idx.is_empty() {
        return Err(Error::SpeciesAbsent(s));
    }
    let rows: Vec<&[f64]> = idx.iter().map(|&i| ea.row(i)).collect();
    DenseMatrix::from_rows(&rows)
}

/// Per row, `[v; v⊙v; v⊙v⊙v]`.
pub fn polynomial_expand(m: &DenseMatrix) -> DenseMatrix {
    let d = m.cols();
    let mut out = DenseMatrix::zeros(m.rows(), 3 * d);
    for i in 0..m.rows() {
        let (src, dst) = (m.row(i), out.row_mut(i));
        for (j, &v) in src.iter().enumerate() {
            dst[j] = v;
            dst[d + j] = v * v;
            dst[2 * d + j] = v * v * v;
        }
    }
    out
}

pub fn temperature_embedding(t: f64, t_m: f64) -> [f64; 4] {
    let r = t / t_m;
    [1.0, r, r * r, r * r * r]
}

/// Structure–temperature embedding `[mean_ions(expand(E_a,s)); E_T]`.
pub fn build_x(st: &Structure, t: f64, t_m: f64, s: SpeciesCode) -> Result<StructureTemperatureEmbedding> {
    build_x_with(st, t, t_m, s, true)
}

pub fn build_x_with(
    st: &Structure,
    t: f64,
    t_m: f64,
    s: SpeciesCode,
    polynomial: bool,
) -> Result<StructureTemperatureEmbedding> {
    if !(t > 0.0) || !(t_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperatures must be positive, got T={t}, T_m={t_m}"
        )));
    }
    let selected = select_species(&atom_embedding(st)?, st, s)?;
    let rows = if polynomial {
        polynomial_expand(&selected)
    } else {
        selected
    };
    let mut vec = vec![0.0; rows.cols()];
    for i in 0..rows.rows() {
        for (v, r) in vec.iter_mut().zip(rows.row(i)) {
            *v += r;
        }
    }
    for v in &mut vec {
        *v /= rows.rows() as f64;
    }
    let te = temperature_embedding(t, t_m);
    if polynomial {
        vec.extend_from_slice(&te);
    } else {
        vec.extend_from_slice(&te[..2]);
    }
    Ok(StructureTemperatureEmbedding { vec })
}

/// Width of the structure–temperature embedding.
pub fn x_dim(node_dim: usize, edge_dim: usize, polynomial: bool) -> usize {
    let d_a = 2 * node_dim + edge_dim;
    if polynomial {
        3 * d_a + 4
    } else {
        d_a + 2
    }
}

/// Precomputed embeddings of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub id: String,
    pub split: Split,
    pub x_vec: Vec<f64>,
    pub p_vec: Option<Vec<f64>>,
    pub y_log10: f64,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedDataset {
    pub samples: Vec<EmbeddedSample>,
}

impl EmbeddedDataset {
    pub fn split(&self, split: Split) -> Vec<&EmbeddedSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn x_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x_vec.len())
    }

    pub fn p_dim(&self) -> Option<usize> {
        self.samples.iter().find_map(|s| s.p_vec.as_ref().map(Vec::len))
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let mut samples = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                samples.push(serde_json::from_str(&line)?);
            }
        }
        Ok(EmbeddedDataset { samples })
    }
}

/// Embeds every sample; trajectory embeddings exist only where a trajectory does.
pub fn embed_dataset(ds: &Dataset, opts: &EmbedOptions) -> Result<EmbeddedDataset> {
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let wrap = |e: Error| Error::Sample {
                id: s.id.clone(),
                reason: e.to_string(),
            };
            let species = s.target.species;
            let x = build_x_with(&s.structure, s.temperature, ds.t_norm, species, opts.polynomial)
                .map_err(wrap)?;
            let p = s
                .trajectory
                .as_ref()
                .map(|tr| {
                    trajectory_embedding_with(tr, &s.structure, species, opts.n_bands, opts.msd_coordinate)
                })
                .transpose()
                .map_err(wrap)?;
            Ok(EmbeddedSample {
                id: s.id.clone(),
                split: s.split,
                x_vec: x.vec,
                p_vec: p.map(|p| p.vec),
                y_log10: s.target.value_log10,
                temperature: s.temperature,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddedDataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Edge;
    use std::f64::consts::PI;

    fn chain(node: &[f64], edge: f64) -> Structure {
        // Atom 0 bonded to atoms 1 and 2.
        Structure {
            positions: vec![[0.0; 3]; 3],
            species: vec![0, 1, 1],
            node_features: node.iter().map(|&v| vec![v]).collect(),
            edges: vec![
                Edge { k: 0, l: 1, features: vec![edge] },
                Edge { k: 0, l: 2, features: vec![edge] },
                Edge { k: 1, l: 0, features: vec![edge] },
                Edge { k: 2, l: 0, features: vec![edge] },
            ],
        }
    }

    #[test]
    fn two_neighbor_average_by_hand() {
        let ea = atom_embedding(&chain(&[1.0, 2.0, 4.0], 0.0)).unwrap();
        assert_eq!(ea.row(0), &[1.0, 0.0, 3.0]);
        // Single neighbor: the concatenation itself.
        assert_eq!(ea.row(1), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_features_give_zero_rows() {
        let ea = atom_embedding(&chain(&[0.0; 3], 0.0)).unwrap();
        assert!(ea.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_atom_errors() {
        let mut st = chain(&[1.0, 2.0, 4.0], 0.0);
        st.edges.retain(|e| e.k != 2 && e.l != 2);
        assert!(matches!(atom_embedding(&st), Err(Error::IsolatedAtom(2))));
    }

    #[test]
    fn species_selection() {
        let ea = DenseMatrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let mut st = chain(&[0.0; 3], 0.0);
        st.species = vec![0, 1, 0, 1];
        assert_eq!(select_species(&ea, &st, 1).unwrap().as_slice(), &[1.0, 3.0]);
        st.species = vec![1, 1, 1, 1];
        assert_eq!(select_species(&ea, &st, 1).unwrap(), ea);
        st.species = vec![2, 2, 1, 2];
        assert_eq!(select_species(&ea, &st, 1).unwrap().as_slice(), &[2.0]);
        assert!(matches!(select_species(&ea, &st, 0), Err(Error::SpeciesAbsent(0))));
    }

    #[test]
    fn polynomial_cases() {
        let e = |v: &[f64]| polynomial_expand(&DenseMatrix::from_rows(&[v]).unwrap()).into_vec();
        assert_eq!(e(&[2.0]), vec![2.0, 4.0, 8.0]);
        assert_eq!(e(&[0.0, -1.0]), vec![0.0, -1.0, 0.0, 1.0, 0.0, -1.0]);
        assert_eq!(e(&[0.5]), vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn temperature_cases() {
        assert_eq!(temperature_embedding(600.0, 600.0), [1.0; 4]);
        assert_eq!(temperature_embedding(1200.0, 600.0), [1.0, 2.0, 4.0, 8.0]);
        let small = temperature_embedding(1e-300, 600.0);
        assert_eq!(small, [1.0, small[1], 0.0, 0.0]);
        assert!(small[1] < 1e-300);
    }

    #[test]
    fn build_x_by_hand() {
        // Two ions whose atom rows are [1] and [3]: expansions [1,1,1] and [3,9,27].
        let st = Structure {
            positions: vec![[0.0; 3]; 2],
            species: vec![0, 0],
            node_features: vec![vec![], vec![]],
            edges: vec![
                Edge { k: 0, l: 1, features: vec![1.0] },
                Edge { k: 1, l: 0, features: vec![3.0] },
            ],
        };
        assert_eq!(build_x(&st, 5.0, 5.0, 0).unwrap().vec, vec![2.0, 5.0, 14.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn build_x_with_zero_features() {
        let st = chain(&[0.0; 3], 0.0);
        let x = build_x(&st, 300.0, 600.0, 1).unwrap().vec;
        assert_eq!(x, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.25, 0.125]);
        assert_eq!(x.len(), x_dim(1, 1, true));
        assert_eq!(build_x_with(&st, 300.0, 600.0, 1, false).unwrap().vec.len(), x_dim(1, 1, false));
    }

    #[test]
    fn identical_ion_rows_pool_to_one_row() {
        let st = chain(&[5.0, 2.0, 2.0], 0.5);
        let x = build_x(&st, 1.0, 1.0, 1).unwrap().vec;
        assert_eq!(&x[..3], &[2.0, 0.5, 5.0]);
        assert_eq!(&x[3..6], &[4.0, 0.25, 25.0]);
    }

    #[test]
    fn band_edges_cover_every_bin_once() {
        for (bins, bands) in [(16, 16), (128, 16), (1000, 7), (17, 4)] {
            let e = band_edges(bins, bands);
            assert_eq!(e.len(), bands + 1);
            assert_eq!((e[0], e[bands]), (1, bins + 1));
            assert!(e.windows(2).all(|w| w[0] < w[1]), "{e:?}");
        }
        assert_eq!(band_edges(4, 4), vec![1, 2, 3, 4, 5]);
    }

    fn single_ion(series: &[f64]) -> (Trajectory, Structure) {
        let st = Structure {
            positions: vec![[0.0; 3]; 2],
            species: vec![0, 1],
            node_features: vec![vec![], vec![]],
            edges: vec![
                Edge { k: 0, l: 1, features: vec![] },
                Edge { k: 1, l: 0, features: vec![] },
            ],
        };
        let frames = series.iter().map(|&x| vec![[x, 0.0, 0.0], [9.0, 9.0, 9.0]]).collect();
        (Trajectory { dt: 1.0, frames }, st)
    }

    #[test]
    fn stationary_ions_embed_to_zero() {
        let (tr, st) = single_ion(&[0.3; 64]);
        assert_eq!(trajectory_embedding(&tr, &st, 0, 8).unwrap().vec, vec![0.0; 9]);
    }

    #[test]
    fn sinusoid_lands_in_one_band() {
        // x(t) = A sin(2π f t / L): the DFT has magnitude A·L/2 at bin f and
        // zero at every other bin in 1..=L/2.
        let (len, f, amp) = (256usize, 20usize, 0.8);
        let series: Vec<f64> = (0..len)
            .map(|t| amp * (2.0 * PI * (f * t) as f64 / len as f64).sin())
            .collect();
        let (tr, st) = single_ion(&series);
        let n_bands = 8;
        let emb = trajectory_embedding_with(&tr, &st, 0, n_bands, false).unwrap().vec;
        let edges = band_edges(len / 2, n_bands);
        let band = edges.windows(2).position(|w| w[0] <= f && f < w[1]).unwrap();
        let width = (edges[band + 1] - edges[band]) as f64;
        // Only the x axis moves, so the axis average divides by 3.
        let expect = amp / 2.0 / width / 3.0;
        for (j, v) in emb.iter().enumerate() {
            if j == band {
                assert!((v - expect).abs() < 1e-12, "band {j}: {v} vs {expect}");
            } else {
                assert!(v.abs() < 1e-12, "band {j} leaked {v}");
            }
        }
    }

    #[test]
    fn trajectory_embedding_invariances() {
        let st = Structure {
            positions: vec![[0.0; 3]; 3],
            species: vec![0, 0, 1],
            node_features: vec![vec![]; 3],
            edges: vec![
                Edge { k: 0, l: 1, features: vec![] },
                Edge { k: 1, l: 2, features: vec![] },
                Edge { k: 2, l: 0, features: vec![] },
            ],
        };
        let frames: Vec<Vec<[f64; 3]>> = (0..40)
            .map(|t| {
                let t = t as f64;
                vec![[t.sin(), 0.1 * t, 0.0], [(0.3 * t).cos(), 0.0, (t * t).sqrt()], [0.0; 3]]
            })
            .collect();
        let tr = Trajectory { dt: 1.0, frames };
        let base = trajectory_embedding(&tr, &st, 0, 4).unwrap().vec;

        let mut shifted = tr.clone();
        for f in &mut shifted.frames {
            for p in f.iter_mut() {
                p[0] += 3.0;
                p[1] -= 1.5;
            }
        }
        let mut swapped = tr.clone();
        for f in &mut swapped.frames {
            f.swap(0, 1);
        }
        for other in [&shifted, &swapped] {
            let v = trajectory_embedding(other, &st, 0, 4).unwrap().vec;
            for (a, b) in base.iter().zip(&v) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        // Two ions with identical motion embed like one.
        let mut twin = tr.clone();
        for f in &mut twin.frames {
            f[1] = f[0];
        }
        let (one, one_st) = {
            let frames = tr.frames.iter().map(|f| vec![f[0], [0.0; 3]]).collect();
            let st = Structure {
                positions: vec![[0.0; 3]; 2],
                species: vec![0, 1],
                node_features: vec![vec![]; 2],
                edges: vec![Edge { k: 0, l: 1, features: vec![] }, Edge { k: 1, l: 0, features: vec![] }],
            };
            (Trajectory { dt: 1.0, frames }, st)
        };
        let a = trajectory_embedding(&twin, &st, 0, 4).unwrap().vec;
        let b = trajectory_embedding(&one, &one_st, 0, 4).unwrap().vec;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_embedding_errors() {
        let (tr, st) = single_ion(&[0.0; 10]);
        assert!(trajectory_embedding(&tr, &st, 0, 6).is_err());
        assert!(matches!(trajectory_embedding(&tr, &st, 7, 2), Err(Error::SpeciesAbsent(7))));
    }
}

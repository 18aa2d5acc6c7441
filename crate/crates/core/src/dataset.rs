//! Domain types shared by every stage: structures, trajectories, transport
//! targets, samples and datasets, plus the JSON-lines dataset format.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Species code of an atom. Codes are small integers defined by the generator.
pub type SpeciesCode = u32;

/// A directed neighbor pair `k -> l` with its edge feature vector.
///
/// An undirected bond is stored as two edges. The neighbor set of atom `k` is
/// the set of outgoing edges of `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub k: usize,
    pub l: usize,
    pub features: Vec<f64>,
}

/// Equilibrium atomic structure with per-atom and per-edge features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub positions: Vec<[f64; 3]>,
    pub species: Vec<SpeciesCode>,
    pub node_features: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
}

impl Structure {
    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.first().map_or(0, Vec::len)
    }

    pub fn edge_dim(&self) -> usize {
        self.edges.first().map_or(0, |e| e.features.len())
    }

    /// Indices of atoms carrying species `s`, in atom order.
    pub fn atoms_of(&self, s: SpeciesCode) -> Vec<usize> {
        self.species
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == s).then_some(i))
            .collect()
    }

    /// Outgoing neighbor count per atom.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_atoms()];
        for e in &self.edges {
            if e.k < deg.len() {
                deg[e.k] += 1;
            }
        }
        deg
    }

    /// Describes every broken structural invariant.
    pub fn violations(&self) -> Vec<String> {
        let n = self.n_atoms();
        let mut out = Vec::new();
        if self.species.len() != n {
            out.push(format!(
                "species has {} entries but there are {n} atoms",
                self.species.len()
            ));
        }
        if self.node_features.len() != n {
            out.push(format!(
                "node_features has {} rows but there are {n} atoms",
                self.node_features.len()
            ));
        }
        let d_n = self.node_dim();
        if self.node_features.iter().any(|r| r.len() != d_n) {
            out.push("node feature rows have inconsistent widths".into());
        }
        let d_e = self.edge_dim();
        for e in &self.edges {
            if e.k >= n || e.l >= n {
                out.push(format!("edge ({}, {}) index out of range [0, {n})", e.k, e.l));
            } else if e.k == e.l {
                out.push(format!("self-edge on atom {}", e.k));
            }
            if e.features.len() != d_e {
                out.push(format!("edge ({}, {}) has inconsistent feature width", e.k, e.l));
            }
        }
        let isolated: Vec<usize> = self
            .degrees()
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| (d == 0).then_some(i))
            .collect();
        if !isolated.is_empty() {
            out.push(format!("isolated atoms {isolated:?}"));
        }
        let finite = self.positions.iter().flatten().all(|v| v.is_finite())
            && self.node_features.iter().flatten().all(|v| v.is_finite())
            && self.edges.iter().flat_map(|e| &e.features).all(|v| v.is_finite());
        if !finite {
            out.push("non-finite structure entry".into());
        }
        out
    }
}

/// Unwrapped atomic coordinates sampled every `dt` time units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl Trajectory {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Displacement series of one coordinate of one atom relative to frame 0.
    pub fn displacement(&self, atom: usize, axis: usize) -> Vec<f64> {
        let origin = self.frames[0][atom][axis];
        self.frames.iter().map(|f| f[atom][axis] - origin).collect()
    }

    pub fn final_time(&self) -> f64 {
        self.dt * (self.n_frames().saturating_sub(1)) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    MsdFinal,
    Diffusivity,
    Conductivity,
}

/// A transport quantity of one species, stored as log10 of the physical value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportTarget {
    pub kind: TargetKind,
    pub species: SpeciesCode,
    pub value_log10: f64,
}

impl TransportTarget {
    pub fn value(&self) -> f64 {
        crate::physics::from_log10(self.value_log10)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub structure: Structure,
    pub trajectory: Option<Trajectory>,
    pub temperature: f64,
    pub target: TransportTarget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    TrajectoryBased,
    StructureBased,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub samples: Vec<Sample>,
    /// Temperature normalization constant for the temperature embedding.
    pub t_norm: f64,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Writes one JSON record per sample.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, &SampleRecord::from_sample(s, self.t_norm))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a JSON-lines dataset. The kind is trajectory-based exactly when
    /// some sample carries a trajectory.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
        let reader = BufReader::new(File::open(path)?);
        let mut samples = Vec::new();
        let mut t_norm = None;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line)?;
            match t_norm {
                None => t_norm = Some(rec.t_norm),
                Some(t) if t != rec.t_norm => {
                    return Err(Error::InvalidDataset(format!(
                        "sample {} has t_norm {} but the dataset uses {t}",
                        rec.id, rec.t_norm
                    )))
                }
                _ => {}
            }
            samples.push(rec.into_sample());
        }
        let kind = if samples.iter().any(|s| s.trajectory.is_some()) {
            DatasetKind::TrajectoryBased
        } else {
            DatasetKind::StructureBased
        };
        let t_norm = t_norm.ok_or_else(|| Error::InvalidDataset("empty dataset file".into()))?;
        Ok(Dataset {
            kind,
            samples,
            t_norm,
        })
    }
}

/// On-disk layout of one sample; field order is part of the format.
#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    split: Split,
    temperature: f64,
    t_norm: f64,
    target: TransportTarget,
    structure: Structure,
    trajectory: Option<Trajectory>,
}

impl SampleRecord {
    fn from_sample(s: &Sample, t_norm: f64) -> Self {
        SampleRecord {
            id: s.id.clone(),
            split: s.split,
            temperature: s.temperature,
            t_norm,
            target: s.target.clone(),
            structure: s.structure.clone(),
            trajectory: s.trajectory.clone(),
        }
    }

    fn into_sample(self) -> Sample {
        Sample {
            id: self.id,
            split: self.split,
            structure: self.structure,
            trajectory: self.trajectory,
            temperature: self.temperature,
            target: self.target,
        }
    }
}

/// Lists every broken dataset invariant; an empty list means the dataset is
/// well formed. Each entry names the offending sample where there is one.
pub fn validate_dataset(ds: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    if !(ds.t_norm > 0.0 && ds.t_norm.is_finite()) {
        out.push(format!("dataset: t_norm must be positive, got {}", ds.t_norm));
    }
    let mut ids = HashSet::new();
    let target_kind = ds.samples.first().map(|s| s.target.kind);
    for s in &ds.samples {
        let mut bad = |msg: String| out.push(format!("sample {}: {msg}", s.id));
        if !ids.insert(s.id.as_str()) {
            bad("duplicate sample id".into());
        }
        if !(s.temperature > 0.0) || !s.temperature.is_finite() {
            bad("temperature must be positive".into());
        }
        if !s.target.value_log10.is_finite() {
            bad("target value_log10 must be finite".into());
        }
        if Some(s.target.kind) != target_kind {
            bad("target kind differs from the rest of the dataset".into());
        }
        for v in s.structure.violations() {
            bad(format!("structure: {v}"));
        }
        match (&s.trajectory, ds.kind, s.split) {
            (Some(_), DatasetKind::StructureBased, _) => {
                bad("trajectory attached in a structure-based dataset".into())
            }
            (Some(_), DatasetKind::TrajectoryBased, Split::Test) => {
                bad("trajectory attached to a test sample".into())
            }
            (None, DatasetKind::TrajectoryBased, Split::Train) => {
                bad("train sample of a trajectory-based dataset lacks a trajectory".into())
            }
            _ => {}
        }
        if let Some(tr) = &s.trajectory {
            if tr.n_frames() < 2 {
                bad("trajectory needs at least 2 frames".into());
            }
            if tr.frames.iter().any(|f| f.len() != s.structure.n_atoms()) {
                bad("trajectory frame atom count differs from the structure".into());
            }
            if !(tr.dt > 0.0) {
                bad("trajectory dt must be positive".into());
            }
            if tr.frames.iter().flatten().flatten().any(|v| !v.is_finite()) {
                bad("non-finite trajectory coordinate".into());
            }
        }
    }
    for split in [Split::Train, Split::Test] {
        if ds.count(split) == 0 {
            out.push(format!("{} split is empty", format!("{split:?}").to_lowercase()));
        }
    }
    out
}

//! Game configuration, datasets, partitions of the observation space and
//! search grids.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::MechanismSpec;

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameConfigInput")]
pub struct GameConfig {
    pub n_agents: usize,
    pub mechanism: MechanismSpec,
    pub obs_dim: usize,
    pub val_dim: usize,
    /// Utilities are divided by `H` so that they lie in `[-1, 1]`.
    pub utility_scale: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GameConfigInput {
    n_agents: usize,
    mechanism: MechanismSpec,
    obs_dim: Option<usize>,
    val_dim: Option<usize>,
    utility_scale: Option<f64>,
}

impl TryFrom<GameConfigInput> for GameConfig {
    type Error = Error;

    fn try_from(raw: GameConfigInput) -> Result<Self> {
        let dim = raw.mechanism.action_dim();
        let cfg = GameConfig {
            n_agents: raw.n_agents,
            mechanism: raw.mechanism,
            obs_dim: raw.obs_dim.unwrap_or(dim),
            val_dim: raw.val_dim.unwrap_or(dim),
            utility_scale: raw
                .utility_scale
                .unwrap_or_else(|| raw.mechanism.default_utility_scale()),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl GameConfig {
    /// Configuration with dimensions and utility scale derived from the mechanism.
    pub fn new(n_agents: usize, mechanism: MechanismSpec) -> Result<Self> {
        let dim = mechanism.action_dim();
        let cfg = GameConfig {
            n_agents,
            mechanism,
            obs_dim: dim,
            val_dim: dim,
            utility_scale: mechanism.default_utility_scale(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(invalid("game.n_agents", "at least two agents are required"));
        }
        self.mechanism.validate()?;
        let dim = self.mechanism.action_dim();
        if self.obs_dim != dim {
            return Err(invalid(
                "game.obs_dim",
                format!("{} requires {dim}, got {}", self.mechanism.name(), self.obs_dim),
            ));
        }
        if self.val_dim != dim {
            return Err(invalid(
                "game.val_dim",
                format!("{} requires {dim}, got {}", self.mechanism.name(), self.val_dim),
            ));
        }
        if !(self.utility_scale.is_finite() && self.utility_scale > 0.0) {
            return Err(invalid("game.utility_scale", "must be a positive finite number"));
        }
        Ok(())
    }
}

/// One joint draw of observations, valuations and bids, one vector per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub obs: Vec<Vec<f64>>,
    pub vals: Vec<Vec<f64>>,
    pub bids: Vec<Vec<f64>>,
}

impl SampleRecord {
    fn check(&self, config: &GameConfig, line: usize) -> Result<()> {
        let n = config.n_agents;
        for (field, rows, dim) in [
            ("obs", &self.obs, config.obs_dim),
            ("vals", &self.vals, config.val_dim),
            ("bids", &self.bids, config.obs_dim),
        ] {
            if rows.len() != n {
                return Err(Error::Dimension(format!(
                    "line {line}: `{field}` has {} entries, expected {n}",
                    rows.len()
                )));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != dim {
                    return Err(Error::Dimension(format!(
                        "line {line}: `{field}[{i}]` has length {}, expected {dim}",
                        row.len()
                    )));
                }
                for (k, &v) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::CoordinateOutOfRange {
                            line,
                            field: format!("{field}[{i}][{k}]"),
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks every record against `config` (line numbers are 1-based record positions).
    pub fn validate(&self, config: &GameConfig) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (j, r) in self.records.iter().enumerate() {
            r.check(config, j + 1)?;
        }
        Ok(())
    }

    /// JSON Lines serialization; a header line is written when seed or config hash is set.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if self.seed.is_some() || self.config_hash.is_some() {
            let header = DatasetHeader {
                seed: self.seed,
                config_hash: self.config_hash.clone(),
            };
            out.push_str(&serde_json::to_string(&header).expect("header serializes"));
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical JSON Lines serialization.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    /// Records with the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&j| self.records[j].clone()).collect(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(ds.to_jsonl().as_bytes())?;
    Ok(())
}

/// Parses a JSON Lines dataset. Blank lines are ignored; line numbers in
/// errors refer to the physical line in the file.
pub fn parse_dataset(text: &str, path: &Path, config: &GameConfig) -> Result<Dataset> {
    let mut ds = Dataset::default();
    let mut seen_content = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(trimmed).map_err(parse_err)?;
        if !seen_content && value.get("obs").is_none() {
            let header: DatasetHeader = serde_json::from_value(value).map_err(parse_err)?;
            ds.seed = header.seed;
            ds.config_hash = header.config_hash;
            seen_content = true;
            continue;
        }
        seen_content = true;
        let record: SampleRecord = serde_json::from_value(value).map_err(parse_err)?;
        record.check(config, line_no)?;
        ds.records.push(record);
    }
    if ds.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ds)
}

pub fn load_dataset(path: &Path, config: &GameConfig) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path, config)
}

/// Axis-aligned box `[lo, hi)`, closed on faces with `hi = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Sup total-variation distance between opponents' conditional
    /// distributions over the cell; `None` means "derive from the prior".
    #[serde(default)]
    pub tau: Option<f64>,
    /// Density bound of the cell-conditioned prior; `None` means unbounded.
    #[serde(default)]
    pub kappa: Option<f64>,
}

impl Cell {
    pub fn contains(&self, o: &[f64]) -> bool {
        o.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&x, (&lo, &hi))| {
            lo <= x && (x < hi || (hi == 1.0 && x == 1.0))
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(lo, hi)| lo >= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub agent: usize,
    pub cells: Vec<Cell>,
}

impl Partition {
    /// The single cell `[0,1]^m` with the given radius and density bound.
    pub fn trivial(agent: usize, dim: usize, tau: Option<f64>, kappa: Option<f64>) -> Self {
        Partition {
            agent,
            cells: vec![Cell {
                lo: vec![0.0; dim],
                hi: vec![1.0; dim],
                tau,
                kappa,
            }],
        }
    }

    /// One-dimensional partition into consecutive intervals between `edges`
    /// (which must start at 0 and end at 1); `tau` and `kappa` are left unset.
    pub fn intervals(agent: usize, edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(invalid("partition.edges", "must start at 0 and end at 1"));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("partition.edges", "must be strictly increasing"));
        }
        Ok(Partition {
            agent,
            cells: edges
                .windows(2)
                .map(|w| Cell {
                    lo: vec![w[0]],
                    hi: vec![w[1]],
                    tau: None,
                    kappa: None,
                })
                .collect(),
        })
    }

    pub fn validate(&self, config: &GameConfig) -> Result<()> {
        if self.agent >= config.n_agents {
            return Err(invalid(
                "partition.agent",
                format!("agent {} does not exist (n = {})", self.agent, config.n_agents),
            ));
        }
        if self.cells.is_empty() {
            return Err(invalid("partition.cells", "at least one cell is required"));
        }
        for (k, c) in self.cells.iter().enumerate() {
            let field = |f: &str| format!("partition.cells[{k}].{f}");
            if c.lo.len() != config.obs_dim || c.hi.len() != config.obs_dim {
                return Err(invalid(
                    &field("lo"),
                    format!("corners must have length {}", config.obs_dim),
                ));
            }
            for (&lo, &hi) in c.lo.iter().zip(&c.hi) {
                if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                    return Err(invalid(&field("lo"), "require 0 <= lo <= hi <= 1"));
                }
            }
            if let Some(t) = c.tau {
                if !(0.0..=1.0).contains(&t) {
                    return Err(invalid(&field("tau"), "must lie in [0, 1]"));
                }
            }
            if let Some(kappa) = c.kappa {
                if !(kappa.is_finite() && kappa > 0.0) {
                    return Err(invalid(&field("kappa"), "must be positive and finite, or null"));
                }
            }
        }
        Ok(())
    }
}

/// Index of the first cell containing `o`.
pub fn assign_cell(partition: &Partition, o: &[f64]) -> Result<usize> {
    partition
        .cells
        .iter()
        .position(|c| c.contains(o))
        .ok_or_else(|| Error::Uncovered { point: o.to_vec() })
}

/// Record indices of each cell, by the partition's agent's observation,
/// preserving dataset order.
pub fn cell_indices(ds: &Dataset, partition: &Partition) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); partition.cells.len()];
    for (j, r) in ds.records.iter().enumerate() {
        let k = assign_cell(partition, &r.obs[partition.agent])?;
        out[k].push(j);
    }
    Ok(out)
}

/// Per-cell conditional datasets.
pub fn split_by_partition(ds: &Dataset, partition: &Partition) -> Result<Vec<Dataset>> {
    Ok(cell_indices(ds, partition)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}

/// Uniform lattice over `[0,1]^dim` with per-axis step `h = min(2w/dim, 1)`.
/// Every point of the cube lies within L1 distance `w` of a lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub radius: f64,
    pub step: f64,
    axis: Vec<f64>,
}

impl Grid {
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn len(&self) -> usize {
        self.axis.len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Point with mixed-radix index `idx`; the first coordinate is the most
    /// significant digit, so index order is lexicographic order.
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let base = self.axis.len();
        let mut p = vec![0.0; self.dim];
        for k in (0..self.dim).rev() {
            p[k] = self.axis[idx % base];
            idx /= base;
        }
        p
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Lattice points with non-increasing coordinates, in lexicographic order.
    pub fn monotone_points(&self) -> Vec<Vec<f64>> {
        fn rec(axis: &[f64], dim: usize, max_idx: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
            if cur.len() == dim {
                out.push(cur.clone());
                return;
            }
            for a in 0..=max_idx {
                cur.push(axis[a]);
                rec(axis, dim, a, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(&self.axis, self.dim, self.axis.len() - 1, &mut Vec::new(), &mut out);
        out
    }

    /// Nearest lattice value to `x` on one axis (ties toward the lower point).
    pub fn snap(&self, x: f64) -> f64 {
        let k = (x / self.step).round() as isize;
        let lo = (k - 1).max(0) as usize;
        let hi = ((k + 1).max(0) as usize).min(self.axis.len() - 1);
        let mut best = self.axis[lo.min(hi)];
        for &a in &self.axis[lo.min(hi)..=hi] {
            if (a - x).abs() < (best - x).abs() {
                best = a;
            }
        }
        best
    }
}

pub fn make_grid(dim: usize, radius: f64) -> Result<Grid> {
    make_grid_capped(dim, radius, DEFAULT_GRID_CAP)
}

pub fn make_grid_capped(dim: usize, radius: f64, cap: usize) -> Result<Grid> {
    if dim == 0 {
        return Err(invalid("grid.dim", "must be at least 1"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid("grid_w", "must be positive and finite"));
    }
    let step = (2.0 * radius / dim as f64).min(1.0);
    let ratio = 1.0 / step;
    let intervals = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round()
    } else {
        ratio.ceil()
    };
    let per_axis = intervals as u128 + 1;
    let points = per_axis.saturating_pow(dim as u32);
    if points > cap as u128 {
        return Err(Error::GridTooLarge {
            points,
            bytes: points.saturating_mul(dim as u128 * 8),
            cap: cap as u128,
        });
    }
    let intervals = intervals as usize;
    let mut axis: Vec<f64> = (0..intervals).map(|k| (k as f64 * step).min(1.0)).collect();
    axis.push(1.0);
    Ok(Grid {
        dim,
        radius,
        step,
        axis,
    })
}

/// Failure probability per event and the number of union-bounded events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceBudget {
    pub delta: f64,
    pub multiplicity: usize,
}

impl ConfidenceBudget {
    /// Splits `delta_total` equally across `multiplicity` events.
    pub fn split(delta_total: f64, multiplicity: usize) -> Result<Self> {
        if !(delta_total > 0.0 && delta_total < 1.0) {
            return Err(invalid("delta_total", "delta_total must lie in (0,1)"));
        }
        if multiplicity == 0 {
            return Err(invalid("multiplicity", "must be at least 1"));
        }
        Ok(ConfidenceBudget {
            delta: delta_total / multiplicity as f64,
            multiplicity,
        })
    }

    pub fn confidence(&self) -> f64 {
        1.0 - self.delta * self.multiplicity as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fpsb2() -> GameConfig {
        GameConfig::new(2, MechanismSpec::FirstPriceSingleItem).unwrap()
    }

    fn rec(o: f64, b: f64) -> SampleRecord {
        SampleRecord {
            obs: vec![vec![o], vec![0.5]],
            vals: vec![vec![o], vec![0.5]],
            bids: vec![vec![b], vec![0.25]],
        }
    }

    #[test]
    fn config_rejects_single_agent() {
        assert!(GameConfig::new(1, MechanismSpec::FirstPriceSingleItem).is_err());
    }

    #[test]
    fn config_defaults_follow_mechanism() {
        let c: GameConfig = serde_json::from_str(
            r#"{"n_agents":3,"mechanism":{"kind":"first_price_combinatorial","items":2}}"#,
        )
        .unwrap();
        assert_eq!((c.obs_dim, c.val_dim, c.utility_scale), (4, 4, 1.0));
        let bad = serde_json::from_str::<GameConfig>(
            r#"{"n_agents":3,"mechanism":{"kind":"uniform_price","units":2},"obs_dim":1}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn load_three_rows_in_order() {
        let ds = Dataset {
            records: vec![rec(0.1, 0.05), rec(0.7, 0.35), rec(0.3, 0.15)],
            seed: None,
            config_hash: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path, &fpsb2()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn out_of_range_bid_reports_line() {
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&rec(0.1, 0.05)).unwrap(),
            serde_json::to_string(&rec(0.9, 1.2)).unwrap()
        );
        let err = parse_dataset(&text, Path::new("x"), &fpsb2()).unwrap_err();
        assert!(err.to_string().starts_with("coordinate out of range, line 2"), "{err}");
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = parse_dataset("", Path::new("x"), &fpsb2()).unwrap_err();
        assert_eq!(err.to_string(), "dataset empty");
        let err = parse_dataset("{\"seed\":1}\n", Path::new("x"), &fpsb2()).unwrap_err();
        assert_eq!(err.to_string(), "dataset empty");
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{{\"seed\":3}}\n{}\n{{oops\n", serde_json::to_string(&rec(0.1, 0.05)).unwrap());
        match parse_dataset(&text, Path::new("x"), &fpsb2()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut r = rec(0.1, 0.05);
        r.bids.pop();
        let text = serde_json::to_string(&r).unwrap();
        assert!(matches!(
            parse_dataset(&text, Path::new("x"), &fpsb2()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn header_round_trip() {
        let ds = Dataset {
            records: vec![rec(0.2, 0.1)],
            seed: Some(42),
            config_hash: Some("ab12".into()),
        };
        let back = parse_dataset(&ds.to_jsonl(), Path::new("x"), &fpsb2()).unwrap();
        assert_eq!(back, ds);
    }

    fn halves() -> Partition {
        Partition::intervals(0, &[0.0, 0.5, 1.0]).unwrap()
    }

    #[test]
    fn assign_cell_examples() {
        let p = halves();
        assert_eq!(assign_cell(&p, &[0.25]).unwrap(), 0);
        // half-open cells: the shared boundary belongs to the upper cell
        assert_eq!(assign_cell(&p, &[0.5]).unwrap(), 1);
        assert_eq!(assign_cell(&p, &[0.999]).unwrap(), 1);
        assert_eq!(assign_cell(&p, &[1.0]).unwrap(), 1);
        assert_eq!(assign_cell(&p, &[0.0]).unwrap(), 0);
    }

    #[test]
    fn overlapping_cells_go_to_lowest_index() {
        let mut p = Partition::trivial(0, 1, Some(0.0), None);
        p.cells.push(p.cells[0].clone());
        assert_eq!(assign_cell(&p, &[0.3]).unwrap(), 0);
    }

    #[test]
    fn uncovered_point_is_reported() {
        let p = Partition {
            agent: 0,
            cells: vec![Cell { lo: vec![0.0], hi: vec![0.5], tau: None, kappa: None }],
        };
        assert!(matches!(assign_cell(&p, &[0.7]), Err(Error::Uncovered { .. })));
    }

    #[test]
    fn split_examples() {
        let ds = Dataset {
            records: [0.1, 0.6, 0.2, 0.9].iter().map(|&o| rec(o, o / 2.0)).collect(),
            ..Default::default()
        };
        assert_eq!(cell_indices(&ds, &halves()).unwrap(), vec![vec![0, 2], vec![1, 3]]);
        let single = split_by_partition(&ds, &Partition::trivial(0, 1, None, None)).unwrap();
        assert_eq!(single, vec![ds.clone()]);
        let skewed = Partition::intervals(0, &[0.0, 0.95, 1.0]).unwrap();
        let parts = split_by_partition(&ds, &skewed).unwrap();
        assert_eq!(parts[1].len(), 0);
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(1, 0.25).unwrap();
        assert_eq!(g.step, 0.5);
        assert_eq!(g.points(), vec![vec![0.0], vec![0.5], vec![1.0]]);
        let g = make_grid(2, 0.5).unwrap();
        assert_eq!(g.step, 0.5);
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(1), vec![0.0, 0.5]);
        assert!(matches!(make_grid(1, 1e-9), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn grid_halving_refines() {
        for &w in &[0.3, 0.15, 0.02, 0.0137] {
            let coarse = make_grid(1, w).unwrap();
            let fine = make_grid(1, w / 2.0).unwrap();
            for a in coarse.axis() {
                assert!(fine.axis().contains(a), "w={w}: {a} missing");
            }
        }
    }

    #[test]
    fn monotone_points_are_non_increasing() {
        let g = make_grid(2, 0.5).unwrap();
        let pts = g.monotone_points();
        assert_eq!(pts.len(), 6);
        assert!(pts.iter().all(|p| p[0] >= p[1]));
    }

    #[test]
    fn budget_split() {
        let b = ConfidenceBudget::split(0.06, 3).unwrap();
        assert!((b.delta - 0.02).abs() < 1e-15);
        assert!((b.confidence() - 0.94).abs() < 1e-12);
        assert_eq!(
            ConfidenceBudget::split(1.5, 3).unwrap_err().to_string(),
            "invalid value for `delta_total`: delta_total must lie in (0,1)"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn grid_covers_cube(dim in 1usize..4, w in 0.05f64..1.0, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let g = make_grid(dim, w).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let d: f64 = p.iter().map(|&x| (x - g.snap(x)).abs()).sum();
                prop_assert!(d <= w + 1e-12);
            }
        }

        #[test]
        fn partition_covers_probes(mut inner in proptest::collection::vec(0.001f64..0.999, 0..6), x in 0.0f64..=1.0) {
            inner.sort_by(f64::total_cmp);
            inner.dedup();
            let mut edges = vec![0.0];
            edges.extend(inner);
            edges.push(1.0);
            let p = Partition::intervals(0, &edges).unwrap();
            let k = assign_cell(&p, &[x]).unwrap();
            prop_assert!(p.cells[k].contains(&[x]));
        }

        #[test]
        fn split_conserves_records(obs in proptest::collection::vec(0.0f64..=1.0, 1..50)) {
            let ds = Dataset { records: obs.iter().map(|&o| rec(o, o)).collect(), ..Default::default() };
            let p = Partition::intervals(0, &[0.0, 0.3, 0.31, 0.8, 1.0]).unwrap();
            let mut all: Vec<usize> = cell_indices(&ds, &p).unwrap().concat();
            all.sort();
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        }

        #[test]
        fn dataset_round_trip_bit_exact(vals in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
            let ds = Dataset { records: vals.iter().map(|&o| rec(o, o * 0.37)).collect(), seed: Some(7), config_hash: None };
            let back = parse_dataset(&ds.to_jsonl(), Path::new("x"), &fpsb2()).unwrap();
            for (a, b) in ds.records.iter().zip(&back.records) {
                prop_assert_eq!(a.bids[0][0].to_bits(), b.bids[0][0].to_bits());
                prop_assert_eq!(a.obs[0][0].to_bits(), b.obs[0][0].to_bits());
            }
        }
    }
}

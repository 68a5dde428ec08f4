//! Problem instances: topology, channel realizations, power budgets and the
//! JSON configuration they are generated from.
//!
//! Random draws use ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(rng_seed)`. Draw order is part of the format:
//!
//! 1. for each cell: BS positions, then user positions (radius, then angle),
//! 2. for each cell: `Q_k` uniform variates for the per-BS budget split,
//! 3. for each user (cell-major order), for each cell, for each BS of that
//!    cell: one shadowing normal, then the `N×M` channel entries in row-major
//!    order as (real, imaginary) normal pairs.
//!
//! Cells sit on a square grid with `cell_spacing` between adjacent centers.
//! BSs and users are uniform in the disc of radius `cell_spacing/2` around
//! their cell center.

use std::ops::Range;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::CMatrix;

/// Links closer than this use this distance for path loss.
pub const MIN_LINK_DISTANCE_M: f64 = 20.0;
/// Reference distance of the path-loss model.
pub const REFERENCE_DISTANCE_M: f64 = 200.0;
/// Path-loss exponent.
pub const PATH_LOSS_EXPONENT: f64 = 3.0;
/// Standard deviation of the log-normal shadowing, dB.
pub const SHADOWING_STD_DB: f64 = 8.0;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid config value for `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("zero-forcing infeasible in cell {cell}: {users} users x {rx} rx antennas exceeds {tx} tx antennas")]
    InfeasibleZf { cell: usize, users: usize, rx: usize, tx: usize },
}

impl NetworkError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        NetworkError::Validation { key: key.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "IBC")]
    Ibc,
    #[serde(rename = "IBC-ZF")]
    IbcZf,
    #[serde(rename = "COMP-FULL")]
    CompFull,
    #[serde(rename = "COMP-PARTIAL-FIXED")]
    CompPartialFixed,
    #[serde(rename = "COMP-SPARSE")]
    CompSparse,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Ibc => "IBC",
            Scenario::IbcZf => "IBC-ZF",
            Scenario::CompFull => "COMP-FULL",
            Scenario::CompPartialFixed => "COMP-PARTIAL-FIXED",
            Scenario::CompSparse => "COMP-SPARSE",
        }
    }

    /// IBC variants constrain the cell sum power; ComP variants constrain
    /// each BS separately.
    pub fn per_bs_power(self) -> bool {
        matches!(self, Scenario::CompFull | Scenario::CompPartialFixed | Scenario::CompSparse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Utility {
    #[serde(rename = "WEIGHTED-SUM-RATE")]
    WeightedSumRate,
    #[serde(rename = "LOG-ONE-PLUS-RATE")]
    LogOnePlusRate,
}

impl Utility {
    pub fn name(self) -> &'static str {
        match self {
            Utility::WeightedSumRate => "WEIGHTED-SUM-RATE",
            Utility::LogOnePlusRate => "LOG-ONE-PLUS-RATE",
        }
    }
}

/// A scalar applied everywhere, or one value per cell / per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Copy> OneOrMany<T> {
    pub fn get(&self, i: usize) -> Option<T> {
        match self {
            OneOrMany::One(v) => Some(*v),
            OneOrMany::Many(vs) => vs.get(i).copied(),
        }
    }

    pub fn first(&self) -> Option<T> {
        self.get(0)
    }

    fn check_len(&self, key: &str, n: usize) -> Result<(), NetworkError> {
        match self {
            OneOrMany::Many(vs) if vs.len() != n => Err(NetworkError::invalid(
                key,
                format!("expected {n} entries, got {}", vs.len()),
            )),
            _ => Ok(()),
        }
    }

    fn values(&self, n: usize) -> Vec<T> {
        (0..n).map(|i| self.get(i).expect("length checked")).collect()
    }
}

fn default_streams() -> OneOrMany<usize> {
    OneOrMany::One(1)
}
fn default_spacing() -> f64 {
    500.0
}
fn default_unit() -> OneOrMany<f64> {
    OneOrMany::One(1.0)
}
fn default_scenario() -> Scenario {
    Scenario::CompFull
}
fn default_utility() -> Utility {
    Utility::WeightedSumRate
}
fn default_cluster() -> usize {
    2
}

/// Default total cell power when neither power key is given, dB.
pub const DEFAULT_TOTAL_CELL_POWER_DB: f64 = 20.0;

/// Scenario configuration, read from a JSON object with these exact keys.
///
/// Either `total_cell_power` (linear) or `total_cell_power_db` may be given,
/// not both. `gamma` is the block-sparsity weight used by `COMP-SPARSE`;
/// `beta` overrides the proximal weight chosen by the algorithm.
/// `serving_sets[k][q]` lists the local user indices served by BS `q` of
/// cell `k` in `COMP-PARTIAL-FIXED`; when absent each user is served by its
/// `serving_cluster_size` nearest BSs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_cells: usize,
    pub bs_per_cell: OneOrMany<usize>,
    pub users_per_cell: OneOrMany<usize>,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    #[serde(default = "default_streams")]
    pub streams: OneOrMany<usize>,
    #[serde(default = "default_spacing")]
    pub cell_spacing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_cell_power: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_cell_power_db: Option<OneOrMany<f64>>,
    #[serde(default = "default_unit")]
    pub noise_power: OneOrMany<f64>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default = "default_utility")]
    pub utility: Utility,
    #[serde(default = "default_unit")]
    pub weights: OneOrMany<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_cluster")]
    pub serving_cluster_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serving_sets: Option<Vec<Vec<Vec<usize>>>>,
}

impl NetworkConfig {
    /// A config with every optional key at its default.
    pub fn new(num_cells: usize, bs_per_cell: usize, users_per_cell: usize, tx: usize, rx: usize) -> Self {
        NetworkConfig {
            num_cells,
            bs_per_cell: OneOrMany::One(bs_per_cell),
            users_per_cell: OneOrMany::One(users_per_cell),
            tx_antennas: tx,
            rx_antennas: rx,
            streams: default_streams(),
            cell_spacing: default_spacing(),
            total_cell_power: None,
            total_cell_power_db: None,
            noise_power: default_unit(),
            rng_seed: 0,
            scenario: default_scenario(),
            utility: default_utility(),
            weights: default_unit(),
            gamma: 0.0,
            beta: None,
            serving_cluster_size: default_cluster(),
            serving_sets: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let cfg: NetworkConfig =
            serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn bs_count(&self, cell: usize) -> usize {
        self.bs_per_cell.get(cell).unwrap_or(0)
    }

    pub fn user_count(&self, cell: usize) -> usize {
        self.users_per_cell.get(cell).unwrap_or(0)
    }

    pub fn total_users(&self) -> usize {
        (0..self.num_cells).map(|k| self.user_count(k)).sum()
    }

    /// Linear total power budget of each cell.
    pub fn cell_power(&self) -> Vec<f64> {
        let k = self.num_cells;
        match (&self.total_cell_power, &self.total_cell_power_db) {
            (Some(p), _) => p.values(k),
            (None, Some(db)) => db.values(k).into_iter().map(db_to_linear).collect(),
            (None, None) => vec![db_to_linear(DEFAULT_TOTAL_CELL_POWER_DB); k],
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let k = self.num_cells;
        if k == 0 {
            return Err(NetworkError::invalid("num_cells", "must be at least 1"));
        }
        self.bs_per_cell.check_len("bs_per_cell", k)?;
        self.users_per_cell.check_len("users_per_cell", k)?;
        for cell in 0..k {
            if self.bs_count(cell) == 0 {
                return Err(NetworkError::invalid("bs_per_cell", "every cell needs at least one BS"));
            }
            if self.user_count(cell) == 0 {
                return Err(NetworkError::invalid("users_per_cell", "every cell needs at least one user"));
            }
        }
        if self.tx_antennas == 0 {
            return Err(NetworkError::invalid("tx_antennas", "must be at least 1"));
        }
        if self.rx_antennas == 0 {
            return Err(NetworkError::invalid("rx_antennas", "must be at least 1"));
        }
        let users = self.total_users();
        self.streams.check_len("streams", users)?;
        let dmax = self.tx_antennas.min(self.rx_antennas);
        for u in 0..users {
            let d = self.streams.get(u).unwrap_or(0);
            if d == 0 || d > dmax {
                return Err(NetworkError::invalid(
                    "streams",
                    format!("user {u} has {d} streams; must be in 1..={dmax} (min of tx/rx antennas)"),
                ));
            }
        }
        if !(self.cell_spacing > 0.0) {
            return Err(NetworkError::invalid("cell_spacing", "must be positive"));
        }
        match (&self.total_cell_power, &self.total_cell_power_db) {
            (Some(_), Some(_)) => {
                return Err(NetworkError::invalid(
                    "total_cell_power",
                    "give either total_cell_power or total_cell_power_db, not both",
                ))
            }
            (Some(p), None) => {
                p.check_len("total_cell_power", k)?;
                if p.values(k).iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(NetworkError::invalid("total_cell_power", "must be positive and finite"));
                }
            }
            (None, Some(db)) => {
                db.check_len("total_cell_power_db", k)?;
                if db.values(k).iter().any(|v| !v.is_finite()) {
                    return Err(NetworkError::invalid("total_cell_power_db", "must be finite"));
                }
            }
            (None, None) => {}
        }
        self.noise_power.check_len("noise_power", users)?;
        if self.noise_power.values(users).iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(NetworkError::invalid("noise_power", "must be positive and finite"));
        }
        self.weights.check_len("weights", users)?;
        if self.weights.values(users).iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(NetworkError::invalid("weights", "must be nonnegative and finite"));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(NetworkError::invalid("gamma", "must be nonnegative and finite"));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(NetworkError::invalid("beta", "must be nonnegative and finite"));
            }
        }
        if self.serving_cluster_size == 0 {
            return Err(NetworkError::invalid("serving_cluster_size", "must be at least 1"));
        }
        if let Some(sets) = &self.serving_sets {
            if sets.len() != k {
                return Err(NetworkError::invalid("serving_sets", format!("expected {k} cells")));
            }
            for (cell, per_bs) in sets.iter().enumerate() {
                let q = self.bs_count(cell);
                let i = self.user_count(cell);
                if per_bs.len() != q {
                    return Err(NetworkError::invalid(
                        "serving_sets",
                        format!("cell {cell}: expected {q} BS entries"),
                    ));
                }
                let mut served = vec![false; i];
                for list in per_bs {
                    for &user in list {
                        if user >= i {
                            return Err(NetworkError::invalid(
                                "serving_sets",
                                format!("cell {cell}: user index {user} out of range"),
                            ));
                        }
                        served[user] = true;
                    }
                }
                if let Some(user) = served.iter().position(|s| !s) {
                    return Err(NetworkError::invalid(
                        "serving_sets",
                        format!("cell {cell}: user {user} is not served by any BS"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Zero-forcing needs `I_k · N ≤ M · Q_k` in every cell.
    pub fn check_zf(&self) -> Result<(), NetworkError> {
        for cell in 0..self.num_cells {
            let users = self.user_count(cell);
            let tx = self.tx_antennas * self.bs_count(cell);
            if users * self.rx_antennas > tx {
                return Err(NetworkError::InfeasibleZf { cell, users, rx: self.rx_antennas, tx });
            }
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Reads and validates a JSON config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<NetworkConfig, NetworkError> {
    let text = std::fs::read_to_string(path)?;
    NetworkConfig::from_json(&text)
}

/// Index bookkeeping for cells, BSs and users. Users are numbered
/// cell-major: all users of cell 0, then cell 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    cells: Vec<CellLayout>,
    users: Vec<UserInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    pub num_bs: usize,
    pub users: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserInfo {
    pub cell: usize,
    pub local: usize,
    pub streams: usize,
}

impl Topology {
    /// `bs[k]` BSs and `users[k]` users in cell `k`; `streams` is per user.
    pub fn new(tx: usize, rx: usize, bs: &[usize], users: &[usize], streams: &[usize]) -> Self {
        assert_eq!(bs.len(), users.len());
        let mut cells = Vec::with_capacity(bs.len());
        let mut infos = Vec::new();
        let mut start = 0;
        for (k, (&q, &i)) in bs.iter().zip(users).enumerate() {
            cells.push(CellLayout { num_bs: q, users: start..start + i });
            for local in 0..i {
                infos.push(UserInfo { cell: k, local, streams: streams[start + local] });
            }
            start += i;
        }
        Topology { tx_antennas: tx, rx_antennas: rx, cells, users: infos }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn cell(&self, k: usize) -> &CellLayout {
        &self.cells[k]
    }

    pub fn cells(&self) -> &[CellLayout] {
        &self.cells
    }

    pub fn user(&self, u: usize) -> UserInfo {
        self.users[u]
    }

    /// Stacked transmit dimension `M · Q_k` of cell `k`.
    pub fn cell_dim(&self, k: usize) -> usize {
        self.tx_antennas * self.cells[k].num_bs
    }

    /// Row range of BS `q` inside a stacked precoder of its cell.
    pub fn bs_rows(&self, q: usize) -> Range<usize> {
        q * self.tx_antennas..(q + 1) * self.tx_antennas
    }
}

/// Immutable channel data of one network realization.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub topology: Topology,
    /// `links[u][l]` is the stacked `N × M·Q_l` channel from all BSs of cell
    /// `l` to user `u`.
    links: Vec<Vec<CMatrix>>,
    pub noise_power: Vec<f64>,
    /// `bs_budget[k][q]`, watts.
    pub bs_budget: Vec<Vec<f64>>,
    /// Total budget of each cell, watts.
    pub cell_budget: Vec<f64>,
    pub bs_positions: Vec<Vec<[f64; 2]>>,
    pub user_positions: Vec<[f64; 2]>,
}

impl ChannelSet {
    /// Assembles a channel set from explicit data. Positions are left at the
    /// origin.
    pub fn from_parts(
        topology: Topology,
        links: Vec<Vec<CMatrix>>,
        noise_power: Vec<f64>,
        bs_budget: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(links.len(), topology.num_users());
        for (u, row) in links.iter().enumerate() {
            assert_eq!(row.len(), topology.num_cells());
            for (l, h) in row.iter().enumerate() {
                assert_eq!(h.shape(), (topology.rx_antennas, topology.cell_dim(l)), "link ({u},{l})");
            }
        }
        let cell_budget = bs_budget.iter().map(|b| b.iter().sum()).collect();
        let bs_positions = topology.cells().iter().map(|c| vec![[0.0; 2]; c.num_bs]).collect();
        let user_positions = vec![[0.0; 2]; topology.num_users()];
        ChannelSet { topology, links, noise_power, bs_budget, cell_budget, bs_positions, user_positions }
    }

    /// Stacked channel `H^l_u`.
    pub fn link(&self, user: usize, cell: usize) -> &CMatrix {
        &self.links[user][cell]
    }

    /// Per-BS channel `H^{q_l}_u`.
    pub fn bs_link(&self, user: usize, cell: usize, bs: usize) -> CMatrix {
        let cols = self.topology.bs_rows(bs);
        self.links[user][cell].columns(cols.start, cols.len()).into_owned()
    }

    /// Channel of the serving cell of `user`.
    pub fn own_link(&self, user: usize) -> &CMatrix {
        &self.links[user][self.topology.user(user).cell]
    }
}

/// Per-entry variance (of each real and imaginary part) of a link at
/// distance `y` meters with linear shadowing factor `shadow`.
pub fn link_variance(distance_m: f64, shadow: f64) -> f64 {
    let y = distance_m.max(MIN_LINK_DISTANCE_M);
    (REFERENCE_DISTANCE_M / y).powf(PATH_LOSS_EXPONENT) * shadow
}

/// Draws one `rows × cols` block with iid entries whose real and imaginary
/// parts each have variance `variance`.
pub fn draw_channel_block<R: Rng>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMatrix {
    let sd = variance.sqrt();
    let mut h = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            h[(i, j)] = Complex64::new(sd * re, sd * im);
        }
    }
    h
}

/// Linear shadowing factor with `10 log10 L ~ N(0, 64)`.
pub fn draw_shadowing<R: Rng>(rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    10f64.powf(SHADOWING_STD_DB * z / 10.0)
}

fn uniform_in_disc<R: Rng>(rng: &mut R, center: [f64; 2], radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    [center[0] + r * theta.cos(), center[1] + r * theta.sin()]
}

fn cell_center(k: usize, num_cells: usize, spacing: f64) -> [f64; 2] {
    let side = (num_cells as f64).sqrt().ceil() as usize;
    [(k % side) as f64 * spacing, (k / side) as f64 * spacing]
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn topology_of(cfg: &NetworkConfig) -> Topology {
    let k = cfg.num_cells;
    let bs: Vec<usize> = (0..k).map(|c| cfg.bs_count(c)).collect();
    let users: Vec<usize> = (0..k).map(|c| cfg.user_count(c)).collect();
    let streams: Vec<usize> = (0..cfg.total_users()).map(|u| cfg.streams.get(u).unwrap_or(1)).collect();
    Topology::new(cfg.tx_antennas, cfg.rx_antennas, &bs, &users, &streams)
}

/// Draws a channel realization. Deterministic in `cfg` (including the seed).
pub fn generate_instance(cfg: &NetworkConfig) -> Result<ChannelSet, NetworkError> {
    cfg.validate()?;
    if cfg.scenario == Scenario::IbcZf {
        cfg.check_zf()?;
    }
    let topology = topology_of(cfg);
    let k = cfg.num_cells;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed);
    let radius = cfg.cell_spacing / 2.0;

    let mut bs_positions = Vec::with_capacity(k);
    let mut user_positions = Vec::with_capacity(topology.num_users());
    for cell in 0..k {
        let center = cell_center(cell, k, cfg.cell_spacing);
        let bs: Vec<[f64; 2]> =
            (0..cfg.bs_count(cell)).map(|_| uniform_in_disc(&mut rng, center, radius)).collect();
        bs_positions.push(bs);
        for _ in 0..cfg.user_count(cell) {
            user_positions.push(uniform_in_disc(&mut rng, center, radius));
        }
    }

    let totals = cfg.cell_power();
    let mut bs_budget = Vec::with_capacity(k);
    for (cell, total) in totals.iter().enumerate() {
        // uniform on (0, 1]
        let draws: Vec<f64> = (0..cfg.bs_count(cell)).map(|_| 1.0 - rng.random::<f64>()).collect();
        let sum: f64 = draws.iter().sum();
        bs_budget.push(draws.iter().map(|d| total * d / sum).collect::<Vec<f64>>());
    }

    let (n, m) = (cfg.rx_antennas, cfg.tx_antennas);
    let mut links = Vec::with_capacity(topology.num_users());
    for pos in &user_positions {
        let mut row = Vec::with_capacity(k);
        for (cell, cell_bs) in bs_positions.iter().enumerate() {
            let mut stacked = CMatrix::zeros(n, topology.cell_dim(cell));
            for (q, bs_pos) in cell_bs.iter().enumerate() {
                let shadow = draw_shadowing(&mut rng);
                let var = link_variance(distance(*pos, *bs_pos), shadow);
                let block = draw_channel_block(&mut rng, n, m, var);
                stacked.view_mut((0, q * m), (n, m)).copy_from(&block);
            }
            row.push(stacked);
        }
        links.push(row);
    }

    let noise_power = (0..topology.num_users()).map(|u| cfg.noise_power.get(u).unwrap_or(1.0)).collect();
    Ok(ChannelSet {
        topology,
        links,
        noise_power,
        bs_budget,
        cell_budget: totals,
        bs_positions,
        user_positions,
    })
}

/// Which users each BS may transmit to. `sets[k][q]` holds sorted local user
/// indices of cell `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServingPattern {
    sets: Vec<Vec<Vec<usize>>>,
}

impl ServingPattern {
    /// Every BS serves every user of its cell.
    pub fn full(topology: &Topology) -> Self {
        let sets = topology
            .cells()
            .iter()
            .map(|c| vec![(0..c.users.len()).collect(); c.num_bs])
            .collect();
        ServingPattern { sets }
    }

    pub fn from_sets(mut sets: Vec<Vec<Vec<usize>>>) -> Self {
        for cell in &mut sets {
            for list in cell.iter_mut() {
                list.sort_unstable();
                list.dedup();
            }
        }
        ServingPattern { sets }
    }

    /// Each user is served by its `cluster` nearest BSs.
    pub fn nearest(ch: &ChannelSet, cluster: usize) -> Self {
        let topo = &ch.topology;
        let mut sets: Vec<Vec<Vec<usize>>> =
            topo.cells().iter().map(|c| vec![Vec::new(); c.num_bs]).collect();
        for u in 0..topo.num_users() {
            let info = topo.user(u);
            let bs = &ch.bs_positions[info.cell];
            let mut order: Vec<usize> = (0..bs.len()).collect();
            order.sort_by(|&a, &b| {
                distance(ch.user_positions[u], bs[a]).total_cmp(&distance(ch.user_positions[u], bs[b]))
            });
            for &q in order.iter().take(cluster.min(bs.len())) {
                sets[info.cell][q].push(info.local);
            }
        }
        ServingPattern::from_sets(sets)
    }

    pub fn serves(&self, cell: usize, bs: usize, local_user: usize) -> bool {
        self.sets[cell][bs].binary_search(&local_user).is_ok()
    }

    pub fn served_by(&self, cell: usize, bs: usize) -> &[usize] {
        &self.sets[cell][bs]
    }

    pub fn sets(&self) -> &[Vec<Vec<usize>>] {
        &self.sets
    }
}

/// Block-sparsity weights `γ^q_u`, one entry per (user, BS of its cell).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    weights: Vec<Vec<f64>>,
}

impl PenaltyWeights {
    pub fn zero(topology: &Topology) -> Self {
        Self::uniform(topology, 0.0)
    }

    pub fn uniform(topology: &Topology, gamma: f64) -> Self {
        let weights = (0..topology.num_users())
            .map(|u| vec![gamma; topology.cell(topology.user(u).cell).num_bs])
            .collect();
        PenaltyWeights { weights }
    }

    pub fn from_vec(weights: Vec<Vec<f64>>) -> Self {
        PenaltyWeights { weights }
    }

    pub fn get(&self, user: usize, bs: usize) -> f64 {
        self.weights[user][bs]
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().flatten().all(|g| *g == 0.0)
    }
}

/// A channel realization together with everything that defines `u(V)` and
/// the feasible set.
#[derive(Debug, Clone)]
pub struct Problem {
    pub channels: ChannelSet,
    pub scenario: Scenario,
    pub utility: Utility,
    pub weights: Vec<f64>,
    pub penalty: PenaltyWeights,
    pub serving: ServingPattern,
}

impl Problem {
    pub fn new(cfg: &NetworkConfig, channels: ChannelSet) -> Self {
        let topo = &channels.topology;
        let weights = (0..topo.num_users()).map(|u| cfg.weights.get(u).unwrap_or(1.0)).collect();
        let penalty = match cfg.scenario {
            Scenario::CompSparse => PenaltyWeights::uniform(topo, cfg.gamma),
            _ => PenaltyWeights::zero(topo),
        };
        let serving = match (cfg.scenario, &cfg.serving_sets) {
            (Scenario::CompPartialFixed, Some(sets)) => ServingPattern::from_sets(sets.clone()),
            (Scenario::CompPartialFixed, None) => ServingPattern::nearest(&channels, cfg.serving_cluster_size),
            _ => ServingPattern::full(topo),
        };
        Problem { scenario: cfg.scenario, utility: cfg.utility, weights, penalty, serving, channels }
    }

    /// Builds a problem directly from channel data, with full serving sets.
    pub fn with_channels(channels: ChannelSet, scenario: Scenario, utility: Utility) -> Self {
        let topo = &channels.topology;
        Problem {
            scenario,
            utility,
            weights: vec![1.0; topo.num_users()],
            penalty: PenaltyWeights::zero(topo),
            serving: ServingPattern::full(topo),
            channels,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.channels.topology
    }
}

/// `generate_instance` followed by [`Problem::new`].
pub fn generate_problem(cfg: &NetworkConfig) -> Result<Problem, NetworkError> {
    let channels = generate_instance(cfg)?;
    Ok(Problem::new(cfg, channels))
}

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{unwrap_angles, CellModels, ModelBundle};
use crate::catalog::{
    destination_point, normalize_lon, wrap_angle, Catalog, LonLat, StormTrack, TrackPoint,
    MIN_TRACK_POINTS, STEP_SECONDS,
};
use crate::condex::{TailChain, TailChainState};
use crate::error::{Error, Result};
use crate::gam::HazardCovariates;
use crate::kde::{Conditioner, KdeModel};
use crate::preprocess::Covariates;

const GENESIS_TRIES: usize = 100;
const POSITIVE_TRIES: usize = 100;
const TRAJECTORY_TRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerTag {
    Genesis,
    Body,
    TailChain,
}

impl SamplerTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerTag::Genesis => "genesis",
            SamplerTag::Body => "body",
            SamplerTag::TailChain => "tail-chain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationCause {
    Hazard,
    Geographic,
    MaxAge,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::Hazard => "hazard",
            TerminationCause::Geographic => "geographic",
            TerminationCause::MaxAge => "max-age",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hazard" => Some(TerminationCause::Hazard),
            "geographic" => Some(TerminationCause::Geographic),
            "max-age" => Some(TerminationCause::MaxAge),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationOptions {
    pub max_age: usize,
    /// Polygon of `[lon, lat]` vertices; the hazard only applies once a storm
    /// has entered it. `None` means everywhere.
    pub hazard_region: Option<Vec<[f64; 2]>>,
    /// Replace the fitted hazard by a constant probability.
    pub forced_hazard: Option<f64>,
    /// Attempts per accepted storm before giving up.
    pub max_attempts: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            max_age: 800,
            hazard_region: None,
            forced_hazard: None,
            max_attempts: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTrack {
    pub track: StormTrack,
    pub seed: u64,
    pub tags: Vec<SamplerTag>,
    pub cause: TerminationCause,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCatalog {
    pub storms: Vec<SyntheticTrack>,
    pub years_of_record: f64,
}

impl SyntheticCatalog {
    pub fn to_catalog(&self) -> Result<Catalog> {
        Catalog::new(
            self.storms.iter().map(|s| s.track.clone()).collect(),
            self.years_of_record,
        )
    }

    /// Storms that did not end through the hazard.
    pub fn censored(&self) -> Vec<bool> {
        self.storms
            .iter()
            .map(|s| s.cause != TerminationCause::Hazard)
            .collect()
    }
}

/// Seed of storm `index` under base seed `seed`, independent of scheduling.
pub fn storm_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Conditioners for a history-dependent draw. Rung `r` conditions on the `r`
/// most recent history values followed by the extras; `free` conditions on
/// nothing.
struct Ladder {
    rungs: Vec<Conditioner>,
    free: Conditioner,
    matched: bool,
}

impl Ladder {
    fn new(model: &KdeModel, k: usize, extras: &[usize], target: usize, matched: bool) -> Result<Self> {
        let rungs = (0..=k)
            .map(|r| {
                let mut given: Vec<usize> = (k - r..k).collect();
                given.extend_from_slice(extras);
                model.conditional(&given, &[target])
            })
            .collect::<Result<Vec<_>>>()?;
        let free = model.conditional(&[], &[target])?;
        Ok(Ladder { rungs, free, matched })
    }

    fn sample_one<R: Rng + ?Sized>(&self, c: &Conditioner, values: &[f64], rng: &mut R) -> Result<f64> {
        if self.matched {
            c.sample_matched(values, rng)
        } else {
            Ok(c.sample(values, rng)?[0])
        }
    }

    /// Draw conditioning on `history` (oldest first) and `extras`, dropping
    /// the oldest history values while the conditioning point is outside the
    /// kernel support.
    fn draw<R: Rng + ?Sized>(
        &self,
        history: &[f64],
        extras: &[f64],
        unwrap: bool,
        rng: &mut R,
    ) -> Result<f64> {
        let r_max = history.len().min(self.rungs.len() - 1);
        for r in (0..=r_max).rev() {
            let h = &history[history.len() - r..];
            let mut values = if unwrap && r > 0 {
                unwrap_angles(h, r - 1)
            } else {
                h.to_vec()
            };
            values.extend_from_slice(extras);
            match self.sample_one(&self.rungs[r], &values, rng) {
                Ok(v) => return Ok(v),
                Err(Error::UnsupportedConditioning) => continue,
                Err(e) => return Err(e),
            }
        }
        log::debug!("engine: conditioning point outside kernel support, drawing unconditionally");
        self.sample_one(&self.free, &[], rng)
    }
}

struct GenesisCell {
    given_location: Conditioner,
    free: Conditioner,
}

fn per_cell<T>(
    models: &CellModels,
    build: impl Fn(&KdeModel) -> Result<T>,
) -> Result<BTreeMap<usize, T>> {
    models
        .models
        .iter()
        .map(|(&c, m)| Ok((c, build(m)?)))
        .collect()
}

/// Simulation-ready view of a bundle with all conditioners precomputed.
pub struct Simulator<'a> {
    bundle: &'a ModelBundle,
    genesis: BTreeMap<usize, GenesisCell>,
    bearing: BTreeMap<usize, Ladder>,
    speed: BTreeMap<usize, Ladder>,
    vorticity: BTreeMap<usize, Ladder>,
    tail: TailChain,
}

struct Genesis {
    x: LonLat,
    speed: f64,
    vorticity: f64,
    bearing: f64,
}

struct StormState {
    points: Vec<TrackPoint>,
    bearings: Vec<f64>,
    speeds: Vec<f64>,
    vorticity: Vec<f64>,
    tags: Vec<SamplerTag>,
    laplace: TailChainState,
}

impl<'a> Simulator<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Result<Self> {
        let k = bundle.order();
        let vm = bundle.config.variance_matched;
        let genesis = per_cell(&bundle.genesis_conditions, |m| {
            Ok(GenesisCell {
                given_location: m.conditional(&[0, 1], &[2, 3, 4])?,
                free: m.conditional(&[], &[2, 3, 4])?,
            })
        })?;
        let bearing = per_cell(&bundle.bearing, |m| Ladder::new(m, k, &[], k, vm))?;
        let speed = per_cell(&bundle.speed, |m| Ladder::new(m, k, &[k], k + 1, vm))?;
        let vorticity = per_cell(&bundle.vorticity, |m| Ladder::new(m, k, &[k], k + 1, vm))?;
        Ok(Simulator {
            bundle,
            genesis,
            bearing,
            speed,
            vorticity,
            tail: TailChain::new(&bundle.condex)?,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        self.bundle
    }

    fn cell(&self, x: LonLat) -> Option<usize> {
        if !(x.lat > -90.0 && x.lat < 90.0) {
            return None;
        }
        self.bundle.grid.active_cell(x).map(|c| self.bundle.grid.flat(c))
    }

    fn model_cell<'m, T>(models: &CellModels, map: &'m BTreeMap<usize, T>, cell: usize) -> &'m T {
        let c = models.resolve(cell).expect("active cells have a model or fallback");
        &map[&c]
    }

    /// `(v₀, ω₀, θ₀)` at `x` with positive speed and vorticity.
    fn genesis_conditions<R: Rng + ?Sized>(
        &self,
        x: LonLat,
        cell: usize,
        rng: &mut R,
    ) -> Result<Option<(f64, f64, f64)>> {
        let g = Self::model_cell(&self.bundle.genesis_conditions, &self.genesis, cell);
        for _ in 0..GENESIS_TRIES {
            let d = match g.given_location.sample(&[x.lon, x.lat], rng) {
                Ok(d) => d,
                Err(Error::UnsupportedConditioning) => g.free.sample(&[], rng)?,
                Err(e) => return Err(e),
            };
            if d[0] > 0.0 && d[1] > 0.0 {
                return Ok(Some((d[0], d[1], wrap_angle(d[2]))));
            }
        }
        Ok(None)
    }

    fn genesis<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<Genesis>> {
        let mut found = None;
        for _ in 0..GENESIS_TRIES {
            let s = self.bundle.genesis_location.sample_joint(rng);
            let x = LonLat::new(normalize_lon(s[0]), s[1]);
            if let Some(c) = self.cell(x) {
                found = Some((x, c));
                break;
            }
        }
        let Some((x, cell)) = found else {
            log::debug!("engine: no genesis location in an active cell");
            return Ok(None);
        };
        Ok(self
            .genesis_conditions(x, cell, rng)?
            .map(|(speed, vorticity, bearing)| Genesis {
                x,
                speed,
                vorticity,
                bearing,
            }))
    }

    /// Motion `(θ_j, v_j)` leaving point `j`, or `None` if no positive speed
    /// was drawn.
    fn motion<R: Rng + ?Sized>(&self, st: &StormState, rng: &mut R) -> Result<Option<(f64, f64)>> {
        let j = st.points.len() - 1;
        let x = st.points[j].position();
        let cell = self.cell(x).expect("track points lie in active cells");
        if j == 0 {
            return Ok(self
                .genesis_conditions(x, cell, rng)?
                .map(|(v, _, th)| (th, v)));
        }
        let b = Self::model_cell(&self.bundle.bearing, &self.bearing, cell);
        let theta = wrap_angle(b.draw(&st.bearings, &[], true, rng)?);
        let s = Self::model_cell(&self.bundle.speed, &self.speed, cell);
        for _ in 0..POSITIVE_TRIES {
            let v = s.draw(&st.speeds, &[theta], false, rng)?;
            if v > 0.0 {
                return Ok(Some((theta, v)));
            }
        }
        Ok(None)
    }

    /// Vorticity at the newest point `j ≥ 1`.
    fn vorticity_step<R: Rng + ?Sized>(
        &self,
        st: &StormState,
        rng: &mut R,
    ) -> Result<(f64, SamplerTag)> {
        let b = self.bundle;
        let j = st.points.len() - 1;
        let p = &st.points[j];
        let nu = Covariates {
            lon: p.lon,
            lat: p.lat,
            bearing: st.bearings[j - 1],
            speed: st.speeds[j - 1],
        };
        if b.config.window.contains(p.lon, p.lat) {
            for _ in 0..2 {
                let Some(s) = self.tail.step(&st.laplace, rng)? else { break };
                let w = b.marginal.from_laplace(s);
                match b.preproc.from_residual(w, &nu) {
                    Ok(omega) => return Ok((omega, SamplerTag::TailChain)),
                    Err(Error::InvalidInverse) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        let cell = self.cell(p.position()).expect("track points lie in active cells");
        let ladder = Self::model_cell(&b.vorticity, &self.vorticity, cell);
        let history = &st.vorticity;
        for _ in 0..POSITIVE_TRIES {
            let omega = ladder.draw(history, &[nu.bearing], false, rng)?;
            if omega > 0.0 {
                return Ok((omega, SamplerTag::Body));
            }
        }
        log::debug!("engine: no positive vorticity drawn, persisting the previous value");
        Ok((history[j - 1], SamplerTag::Body))
    }

    fn laplace_of(&self, omega: f64, nu: &Covariates) -> f64 {
        let b = self.bundle;
        if !b.config.window.contains(nu.lon, nu.lat) {
            return f64::NEG_INFINITY;
        }
        b.preproc
            .to_residual(omega, nu)
            .map(|w| b.marginal.to_laplace(w))
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// One attempt at a storm; `None` when genesis fails or the storm leaves
    /// the domain before reaching the minimum lifespan.
    fn attempt<R: Rng + ?Sized>(
        &self,
        opts: &SimulationOptions,
        rng: &mut R,
    ) -> Result<Option<(StormState, TerminationCause)>> {
        let b = self.bundle;
        let k = b.order();
        let Some(g) = self.genesis(rng)? else { return Ok(None) };
        let mut st = StormState {
            points: vec![TrackPoint {
                lon: g.x.lon,
                lat: g.x.lat,
                time_index: 0,
                vorticity: g.vorticity,
            }],
            bearings: Vec::new(),
            speeds: Vec::new(),
            vorticity: vec![g.vorticity],
            tags: vec![SamplerTag::Genesis],
            laplace: TailChainState::default(),
        };
        let nu0 = Covariates {
            lon: g.x.lon,
            lat: g.x.lat,
            bearing: g.bearing,
            speed: g.speed,
        };
        st.laplace.push(self.laplace_of(g.vorticity, &nu0), k);
        let mut entered = opts.hazard_region.is_none();
        if let Some(poly) = &opts.hazard_region {
            entered = point_in_polygon(g.x, poly);
        }

        let cause = loop {
            let j = st.points.len() - 1;
            let x = st.points[j].position();
            let mut moved = None;
            for attempt in 0..TRAJECTORY_TRIES {
                let m = if j == 0 && attempt == 0 {
                    Some((g.bearing, g.speed))
                } else {
                    self.motion(&st, rng)?
                };
                let Some((theta, v)) = m else { continue };
                let Ok(next) = destination_point(x, v, theta, STEP_SECONDS) else { continue };
                if self.cell(next).is_some() {
                    moved = Some((theta, v, next));
                    break;
                }
            }
            let Some((theta, v, next)) = moved else {
                break TerminationCause::Geographic;
            };
            st.bearings.push(theta);
            st.speeds.push(v);
            st.points.push(TrackPoint {
                lon: next.lon,
                lat: next.lat,
                time_index: j as i64 + 1,
                vorticity: f64::NAN,
            });
            let (omega, tag) = self.vorticity_step(&st, rng)?;
            st.points[j + 1].vorticity = omega;
            st.vorticity.push(omega);
            st.tags.push(tag);
            let nu = Covariates {
                lon: next.lon,
                lat: next.lat,
                bearing: theta,
                speed: v,
            };
            st.laplace.push(self.laplace_of(omega, &nu), k);

            let age = st.points.len();
            if let Some(poly) = &opts.hazard_region {
                entered = entered || point_in_polygon(next, poly);
            }
            if entered && age >= MIN_TRACK_POINTS {
                let p = match opts.forced_hazard {
                    Some(p) => p,
                    None => b.gam.hazard(&HazardCovariates {
                        vorticity: omega,
                        drop: st.vorticity[j] - omega,
                        age,
                        lon: next.lon,
                        lat: next.lat,
                    }),
                };
                if rng.random::<f64>() < p {
                    break TerminationCause::Hazard;
                }
            }
            if age >= opts.max_age {
                break TerminationCause::MaxAge;
            }
        };
        if st.points.len() < MIN_TRACK_POINTS {
            return Ok(None);
        }
        Ok(Some((st, cause)))
    }

    /// Simulate one accepted storm from its own seed.
    pub fn simulate_storm(&self, seed: u64, opts: &SimulationOptions) -> Result<SyntheticTrack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..opts.max_attempts.max(1) {
            if let Some((st, cause)) = self.attempt(opts, &mut rng)? {
                let track = StormTrack::new(format!("s{seed:016x}"), st.points)?;
                return Ok(SyntheticTrack {
                    track,
                    seed,
                    tags: st.tags,
                    cause,
                });
            }
        }
        Err(Error::fit(
            "engine",
            format!(
                "no admissible storm after {} attempts (seed {seed})",
                opts.max_attempts
            ),
        ))
    }

    /// `n` storms on a pool of `workers` threads. Storm `i` depends only on
    /// `(seed, i)`.
    pub fn simulate_catalog(
        &self,
        n: usize,
        seed: u64,
        workers: usize,
        opts: &SimulationOptions,
    ) -> Result<SyntheticCatalog> {
        if n == 0 {
            return Err(Error::Argument("number of storms must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        let mut storms = pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| self.simulate_storm(storm_seed(seed, i as u64), opts))
                .collect::<Result<Vec<_>>>()
        })?;
        for (i, s) in storms.iter_mut().enumerate() {
            s.track.id = format!("syn{:06}", i + 1);
        }
        Ok(SyntheticCatalog {
            storms,
            years_of_record: n as f64 / self.bundle.storms_per_year,
        })
    }
}

pub fn simulate_catalog(
    bundle: &ModelBundle,
    n: usize,
    seed: u64,
    workers: usize,
    opts: &SimulationOptions,
) -> Result<SyntheticCatalog> {
    Simulator::new(bundle)?.simulate_catalog(n, seed, workers, opts)
}

/// Even-odd rule on the lon/lat plane.
pub(crate) fn point_in_polygon(p: LonLat, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[(i + n - 1) % n];
        if (yi > p.lat) != (yj > p.lat) && p.lon < (xj - xi) * (p.lat - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_membership() {
        let sq = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        assert!(point_in_polygon(LonLat::new(5.0, 5.0), &sq));
        assert!(!point_in_polygon(LonLat::new(15.0, 5.0), &sq));
        assert!(!point_in_polygon(LonLat::new(5.0, -1.0), &sq));
    }

    #[test]
    fn storm_seeds_differ_by_index() {
        let a = storm_seed(7, 0);
        assert_eq!(a, storm_seed(7, 0));
        assert_ne!(a, storm_seed(7, 1));
        assert_ne!(a, storm_seed(8, 0));
    }
}

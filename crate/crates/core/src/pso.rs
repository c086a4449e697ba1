//! Particle swarm optimization over a bounded, normalized search space.
//!
//! Particles live in `[0,1]^D`; positions are decoded to user units through a
//! [`SearchSpace`] only when the objective is evaluated. Every iteration
//! evaluates all particles first and applies best-updates afterwards in
//! particle order, so parallel evaluation cannot change the outcome.
//!
//! Random draw order (consumed from a [`RandomStream`]):
//! 1. initial positions, particle-major (`n_particles × D` draws);
//! 2. initial velocities, particle-major, mapped to `v_max·(2u − 1)`;
//! 3. per iteration, per particle: the `r1` vector (`D` draws) then the
//!    `r2` vector (`D` draws).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source of uniform draws in `[0, 1)`.
pub trait RandomStream {
    fn uniform(&mut self) -> f64;
}

/// Adapts any `rand` generator to [`RandomStream`].
pub struct RngStream<R>(pub R);

impl<R: Rng> RandomStream for RngStream<R> {
    fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }
}

impl RngStream<ChaCha8Rng> {
    pub fn seeded(seed: u64) -> Self {
        RngStream(ChaCha8Rng::seed_from_u64(seed))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Continuous,
    Integer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    #[serde(default = "default_kind")]
    pub kind: Kind,
}

fn default_scale() -> Scale {
    Scale::Linear
}

fn default_kind() -> Kind {
    Kind::Continuous
}

impl Dim {
    pub fn linear(name: &str, lower: f64, upper: f64) -> Self {
        Dim {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Linear,
            kind: Kind::Continuous,
        }
    }

    pub fn log(name: &str, lower: f64, upper: f64) -> Self {
        Dim {
            scale: Scale::Log,
            ..Dim::linear(name, lower, upper)
        }
    }

    pub fn integer(self) -> Self {
        Dim {
            kind: Kind::Integer,
            ..self
        }
    }

    /// Maps a normalized coordinate to user units.
    pub fn decode(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = match self.scale {
            _ if u == 0.0 => self.lower,
            _ if u == 1.0 => self.upper,
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
        };
        let v = v.clamp(self.lower, self.upper);
        match self.kind {
            Kind::Continuous => v,
            Kind::Integer => v.round().clamp(self.lower.ceil(), self.upper.floor()),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::Config(format!(
                "search dimension '{}' needs finite lower < upper, got [{}, {}]",
                self.name, self.lower, self.upper
            )));
        }
        if self.scale == Scale::Log && self.lower <= 0.0 {
            return Err(Error::Config(format!(
                "log-scale dimension '{}' must be strictly positive",
                self.name
            )));
        }
        if self.kind == Kind::Integer && self.lower.ceil() > self.upper.floor() {
            return Err(Error::Config(format!(
                "integer dimension '{}' contains no integer",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        let s = SearchSpace { dims };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        for (i, d) in self.dims.iter().enumerate() {
            d.validate()?;
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!(
                    "duplicate search dimension '{}'",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn decode(&self, x: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(x).map(|(d, u)| d.decode(*u)).collect()
    }

    /// `D` copies of `[lo, hi]`, linear and continuous.
    pub fn uniform_box(d: usize, lo: f64, hi: f64) -> Result<Self> {
        SearchSpace::new(
            (0..d)
                .map(|i| Dim::linear(&format!("x{i}"), lo, hi))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub n_particles: usize,
    pub t_max: usize,
    pub c1: f64,
    pub c2: f64,
    pub w_max: f64,
    pub w_min: f64,
    pub v_max: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            n_particles: 30,
            t_max: 200,
            c1: 2.0,
            c2: 2.0,
            w_max: 0.9,
            w_min: 0.4,
            v_max: 0.2,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("pso: {m}")));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1");
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1");
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return bad("c1 and c2 must be non-negative");
        }
        if !(self.w_min <= self.w_max) || !self.w_min.is_finite() || !self.w_max.is_finite() {
            return bad("need finite w_min <= w_max");
        }
        if !(self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        Ok(())
    }
}

/// Linearly decayed inertia weight, `w_max` at `t = 0` and `w_min` at `t = t_max`.
pub fn inertia(t: usize, cfg: &PsoConfig) -> Result<f64> {
    if t > cfg.t_max || cfg.t_max == 0 {
        return Err(Error::Parameter(format!(
            "inertia: t = {t} outside 0..={}",
            cfg.t_max
        )));
    }
    if t == cfg.t_max {
        return Ok(cfg.w_min);
    }
    Ok(cfg.w_max - ((cfg.w_max - cfg.w_min) / cfg.t_max as f64) * t as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub pbest_x: Vec<f64>,
    pub pbest_f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub gbest_x: Vec<f64>,
    pub gbest_f: f64,
    pub t: usize,
}

/// Velocity update with explicit coefficient vectors, clamped to `±v_max`.
#[allow(clippy::too_many_arguments)]
pub fn update_velocity(
    p: &Particle,
    gbest_x: &[f64],
    w: f64,
    c1: f64,
    c2: f64,
    r1: &[f64],
    r2: &[f64],
    v_max: f64,
) -> Vec<f64> {
    (0..p.x.len())
        .map(|j| {
            let v = w * p.v[j]
                + c1 * r1[j] * (p.pbest_x[j] - p.x[j])
                + c2 * r2[j] * (gbest_x[j] - p.x[j]);
            v.clamp(-v_max, v_max)
        })
        .collect()
}

/// `x + v` with reflection at the unit-box walls; reflected components
/// have their velocity negated.
pub fn update_position(x: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut nx = Vec::with_capacity(x.len());
    let mut nv = v.to_vec();
    for j in 0..x.len() {
        let mut y = x[j] + v[j];
        if y > 1.0 {
            y = 2.0 - y;
            nv[j] = -nv[j];
        } else if y < 0.0 {
            y = -y;
            nv[j] = -nv[j];
        }
        nx.push(y.clamp(0.0, 1.0));
    }
    (nx, nv)
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        log::warn!("objective returned NaN; treating as +inf");
        f64::INFINITY
    } else {
        f
    }
}

/// Applies one round of fitness values (indexed by particle) to the swarm.
pub fn update_bests(swarm: &mut SwarmState, fitness: &[f64]) {
    for (p, &f) in swarm.particles.iter_mut().zip(fitness) {
        let f = sanitize(f);
        if f < p.pbest_f {
            p.pbest_f = f;
            p.pbest_x = p.x.clone();
        }
        if f < swarm.gbest_f {
            swarm.gbest_f = f;
            swarm.gbest_x = p.x.clone();
        }
    }
}

/// One objective evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// 0 for the initial population, then 1..=t_max.
    pub iteration: usize,
    pub particle: usize,
    pub params: Vec<f64>,
    pub fitness: f64,
    /// Global best fitness after this iteration's bests were applied.
    pub gbest: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsoResult {
    pub best_x: Vec<f64>,
    pub best_params: Vec<f64>,
    pub best_fitness: f64,
    /// Global best after the initial evaluation, then after each iteration (`t_max + 1` entries).
    pub gbest_trace: Vec<f64>,
    pub evaluations: Vec<Evaluation>,
}

/// Identifies the evaluation for seeding or logging.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalContext {
    pub iteration: usize,
    pub particle: usize,
}

fn evaluate_all<F>(
    objective: &F,
    space: &SearchSpace,
    xs: &[Vec<f64>],
    iteration: usize,
) -> Vec<(Vec<f64>, f64)>
where
    F: Fn(EvalContext, &[f64]) -> f64 + Sync,
{
    let one = |(particle, x): (usize, &Vec<f64>)| {
        let params = space.decode(x);
        let f = objective(
            EvalContext {
                iteration,
                particle,
            },
            &params,
        );
        (params, f)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        xs.par_iter().enumerate().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        xs.iter().enumerate().map(one).collect()
    }
}

/// Initializes a swarm from the stream without evaluating it.
pub fn init_swarm(d: usize, cfg: &PsoConfig, rng: &mut dyn RandomStream) -> SwarmState {
    let xs: Vec<Vec<f64>> = (0..cfg.n_particles)
        .map(|_| (0..d).map(|_| rng.uniform()).collect())
        .collect();
    let particles = xs
        .into_iter()
        .map(|x| {
            let v = (0..d)
                .map(|_| cfg.v_max * (2.0 * rng.uniform() - 1.0))
                .collect();
            Particle {
                pbest_x: x.clone(),
                x,
                v,
                pbest_f: f64::INFINITY,
            }
        })
        .collect::<Vec<_>>();
    SwarmState {
        gbest_x: particles[0].x.clone(),
        gbest_f: f64::INFINITY,
        particles,
        t: 0,
    }
}

/// Minimizes `objective` over `space`. The objective receives decoded
/// parameters and may be called concurrently.
pub fn optimize<F>(
    objective: F,
    space: &SearchSpace,
    cfg: &PsoConfig,
    rng: &mut dyn RandomStream,
) -> Result<PsoResult>
where
    F: Fn(EvalContext, &[f64]) -> f64 + Sync,
{
    space.validate()?;
    cfg.validate()?;
    let d = space.len();
    let mut swarm = init_swarm(d, cfg, rng);
    let mut evaluations = Vec::with_capacity(cfg.n_particles * (cfg.t_max + 1));
    let mut gbest_trace = Vec::with_capacity(cfg.t_max + 1);

    let mut record = |swarm: &mut SwarmState, results: Vec<(Vec<f64>, f64)>, iteration: usize| {
        let fitness: Vec<f64> = results.iter().map(|(_, f)| sanitize(*f)).collect();
        update_bests(swarm, &fitness);
        for (particle, ((params, _), f)) in results.into_iter().zip(fitness).enumerate() {
            evaluations.push(Evaluation {
                iteration,
                particle,
                params,
                fitness: f,
                gbest: swarm.gbest_f,
            });
        }
        gbest_trace.push(swarm.gbest_f);
    };

    let xs: Vec<Vec<f64>> = swarm.particles.iter().map(|p| p.x.clone()).collect();
    let results = evaluate_all(&objective, space, &xs, 0);
    record(&mut swarm, results, 0);

    for t in 1..=cfg.t_max {
        let w = inertia(t, cfg)?;
        let gbest_x = swarm.gbest_x.clone();
        for p in swarm.particles.iter_mut() {
            let r1: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
            let r2: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
            let v = update_velocity(p, &gbest_x, w, cfg.c1, cfg.c2, &r1, &r2, cfg.v_max);
            let (x, v) = update_position(&p.x, &v);
            p.x = x;
            p.v = v;
        }
        swarm.t = t;
        let xs: Vec<Vec<f64>> = swarm.particles.iter().map(|p| p.x.clone()).collect();
        let results = evaluate_all(&objective, space, &xs, t);
        record(&mut swarm, results, t);
    }

    Ok(PsoResult {
        best_params: space.decode(&swarm.gbest_x),
        best_x: swarm.gbest_x,
        best_fitness: swarm.gbest_f,
        gbest_trace,
        evaluations,
    })
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn particle(x: f64, v: f64, pbest: f64) -> Particle {
        Particle {
            x: vec![x],
            v: vec![v],
            pbest_x: vec![pbest],
            pbest_f: 0.0,
        }
    }

    #[test]
    fn inertia_schedule() {
        let cfg = PsoConfig::default();
        assert_eq!(inertia(0, &cfg).unwrap(), 0.9);
        assert_eq!(inertia(200, &cfg).unwrap(), 0.4);
        assert!((inertia(100, &cfg).unwrap() - 0.65).abs() < 1e-15);
        assert!(inertia(201, &cfg).is_err());
    }

    #[test]
    fn velocity_hand_example() {
        let p = particle(0.5, 0.1, 0.7);
        let raw = update_velocity(&p, &[0.9], 0.5, 2.0, 2.0, &[0.5], &[0.25], f64::INFINITY);
        assert!((raw[0] - 0.45).abs() < 1e-15);
        let clamped = update_velocity(&p, &[0.9], 0.5, 2.0, 2.0, &[0.5], &[0.25], 0.2);
        assert_eq!(clamped, vec![0.2]);
    }

    #[test]
    fn velocity_degenerate_cases() {
        let p = particle(0.3, 0.15, 0.8);
        assert_eq!(
            update_velocity(&p, &[0.1], 1.0, 0.0, 0.0, &[0.7], &[0.2], 0.2),
            vec![0.15]
        );
        let q = particle(0.3, 0.1, 0.3);
        let v = update_velocity(&q, &[0.3], 0.7, 2.0, 2.0, &[0.9], &[0.9], 0.2);
        assert!((v[0] - 0.07).abs() < 1e-15);
    }

    #[test]
    fn reflection() {
        let (x, v) = update_position(&[0.9], &[0.2]);
        assert!((x[0] - 0.9).abs() < 1e-15);
        assert_eq!(v, vec![-0.2]);
        let (x, v) = update_position(&[0.1], &[-0.15]);
        assert!((x[0] - 0.05).abs() < 1e-15);
        assert_eq!(v, vec![0.15]);
        let (x, v) = update_position(&[0.4], &[0.0]);
        assert_eq!((x, v), (vec![0.4], vec![0.0]));
    }

    #[test]
    fn ties_do_not_replace_bests() {
        let mut swarm = SwarmState {
            particles: vec![particle(0.2, 0.0, 0.5)],
            gbest_x: vec![0.5],
            gbest_f: 0.0,
            t: 0,
        };
        update_bests(&mut swarm, &[0.0]);
        assert_eq!(swarm.particles[0].pbest_x, vec![0.5]);
        assert_eq!(swarm.gbest_x, vec![0.5]);
        update_bests(&mut swarm, &[f64::NAN]);
        assert_eq!(swarm.gbest_f, 0.0);
    }

    #[test]
    fn decode_scales() {
        let d = Dim::log("lr", 1e-4, 1e-2);
        assert!((d.decode(0.5) - 1e-3).abs() < 1e-15);
        assert_eq!(d.decode(0.0), 1e-4);
        let h = Dim::log("hidden", 16.0, 256.0).integer();
        assert_eq!(h.decode(0.5), 64.0);
        assert_eq!(h.decode(1.0), 256.0);
        assert!(SearchSpace::new(vec![]).is_err());
        assert!(SearchSpace::new(vec![Dim::log("bad", 0.0, 1.0)]).is_err());
        assert!(SearchSpace::new(vec![Dim::linear("flat", 1.0, 1.0)]).is_err());
    }

    #[test]
    fn evaluation_count_and_monotone_trace() {
        let space = SearchSpace::uniform_box(2, -1.0, 1.0).unwrap();
        let cfg = PsoConfig {
            n_particles: 2,
            t_max: 2,
            ..Default::default()
        };
        let r = optimize(|_, x| sphere(x), &space, &cfg, &mut RngStream::seeded(1)).unwrap();
        assert_eq!(r.evaluations.len(), 6);
        assert_eq!(r.gbest_trace.len(), 3);
        assert!(r.gbest_trace.windows(2).all(|w| w[1] <= w[0]));
        let min = r
            .evaluations
            .iter()
            .map(|e| e.fitness)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_fitness, min);
    }

    #[test]
    fn constant_objective() {
        let space = SearchSpace::uniform_box(3, 0.0, 1.0).unwrap();
        let cfg = PsoConfig {
            n_particles: 4,
            t_max: 5,
            ..Default::default()
        };
        let r = optimize(|_, _| 7.5, &space, &cfg, &mut RngStream::seeded(3)).unwrap();
        assert_eq!(r.best_fitness, 7.5);
    }

    #[test]
    fn ballistic_motion_with_reflection() {
        // One particle, no attraction, unit inertia: it bounces between the walls.
        let space = SearchSpace::uniform_box(1, 0.0, 1.0).unwrap();
        let cfg = PsoConfig {
            n_particles: 1,
            t_max: 20,
            c1: 0.0,
            c2: 0.0,
            w_max: 1.0,
            w_min: 1.0,
            v_max: 0.25,
            seed: 0,
        };
        struct Fixed(Vec<f64>);
        impl RandomStream for Fixed {
            fn uniform(&mut self) -> f64 {
                if self.0.is_empty() {
                    0.5
                } else {
                    self.0.remove(0)
                }
            }
        }
        // x0 = 0.3, v0 = 0.25.
        let mut rng = Fixed(vec![0.3, 1.0]);
        let r = optimize(|_, x| x[0], &space, &cfg, &mut rng).unwrap();
        let xs: Vec<f64> = r.evaluations.iter().map(|e| e.params[0]).collect();
        let expected = [0.3, 0.55, 0.8, 0.95, 0.7, 0.45, 0.2, 0.05, 0.3];
        for (a, b) in xs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{xs:?}");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let space = SearchSpace::uniform_box(3, -5.12, 5.12).unwrap();
        let cfg = PsoConfig {
            n_particles: 8,
            t_max: 30,
            ..Default::default()
        };
        let a = optimize(|_, x| rastrigin(x), &space, &cfg, &mut RngStream::seeded(9)).unwrap();
        let b = optimize(|_, x| rastrigin(x), &space, &cfg, &mut RngStream::seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_converges() {
        let space = SearchSpace::uniform_box(5, -5.0, 5.0).unwrap();
        let r = optimize(
            |_, x| sphere(x),
            &space,
            &PsoConfig::default(),
            &mut RngStream::seeded(0),
        )
        .unwrap();
        assert!(r.best_fitness < 1e-3, "{}", r.best_fitness);
    }
}

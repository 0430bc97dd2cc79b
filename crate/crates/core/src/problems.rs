//! Benchmark systems and synthetic data.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::{ProblemSpec, VectorFieldBasis};
use crate::likelihood::{Dataset, NoiseModel};
use crate::reference::{self, Tolerance};

/// `coef · Π x[factors]` contributing to component `state`.
#[derive(Debug, Clone, PartialEq)]
struct Term {
    state: usize,
    coef: f64,
    factors: Vec<usize>,
}

impl Term {
    fn new(state: usize, coef: f64, factors: &[usize]) -> Self {
        Self {
            state,
            coef,
            factors: factors.to_vec(),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.factors.iter().fold(self.coef, |acc, &i| acc * x[i])
    }
}

type DirectField = fn(&[f64], &[f64]) -> Vec<f64>;

/// Basis fields that are sums of monomials, with exact state Jacobians.
struct MonomialBasis {
    dim: usize,
    columns: Vec<Vec<Term>>,
    direct: DirectField,
}

impl VectorFieldBasis for MonomialBasis {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        self.columns.len()
    }

    fn eval(&self, x: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for (j, terms) in self.columns.iter().enumerate() {
            for t in terms {
                out[(t.state, j)] += t.value(x);
            }
        }
    }

    fn jacobian(&self, x: &[f64], j: usize) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.dim, self.dim);
        for t in &self.columns[j] {
            for (pos, &var) in t.factors.iter().enumerate() {
                let rest = t
                    .factors
                    .iter()
                    .enumerate()
                    .filter(|(p, _)| *p != pos)
                    .fold(t.coef, |acc, (_, &i)| acc * x[i]);
                jac[(t.state, var)] += rest;
            }
        }
        jac
    }

    fn reference_field(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        (self.direct)(x, theta)
    }
}

/// A benchmark inverse problem with its default experiment settings.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub label: String,
    pub spec: ProblemSpec,
    pub theta_star: Vec<f64>,
    pub theta0: Vec<f64>,
    pub data_times: Vec<f64>,
    pub noise_var: f64,
    pub step: f64,
    /// Number of initial sampler proposals that are accepted unconditionally.
    pub burn_in: usize,
}

impl Benchmark {
    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }
}

fn build(
    label: &str,
    x0: Vec<f64>,
    horizon: f64,
    columns: Vec<Vec<Term>>,
    direct: DirectField,
) -> ProblemSpec {
    let basis = MonomialBasis {
        dim: x0.len(),
        columns,
        direct,
    };
    ProblemSpec::new(label, x0, horizon, Arc::new(basis)).expect("benchmark definitions are valid")
}

/// `ẋ = θ`: the filter is exact here, which makes it the reference case for
/// choosing between the Jacobian variants.
pub fn constant_rate() -> Benchmark {
    let spec = build(
        "constant",
        vec![0.0],
        1.0,
        vec![vec![Term::new(0, 1.0, &[])]],
        |_x, th| vec![th[0]],
    );
    Benchmark {
        label: "constant".into(),
        spec,
        theta_star: vec![2.0],
        theta0: vec![1.0],
        data_times: vec![0.5, 1.0],
        noise_var: 1e-4,
        step: 0.1,
        burn_in: 0,
    }
}

/// `ẋ = θ₁x − θ₂x²`.
pub fn logistic() -> Benchmark {
    let spec = build(
        "logistic",
        vec![0.1],
        3.0,
        vec![
            vec![Term::new(0, 1.0, &[0])],
            vec![Term::new(0, -1.0, &[0, 0])],
        ],
        |x, th| vec![th[0] * x[0] - th[1] * x[0] * x[0]],
    );
    Benchmark {
        label: "logistic".into(),
        spec,
        theta_star: vec![3.0, 3.0],
        theta0: vec![2.0, 4.0],
        data_times: (1..=10).map(|i| 0.3 * i as f64).collect(),
        noise_var: 1e-4,
        step: 0.1,
        burn_in: 10,
    }
}

/// Predator-prey system `ẋ₁ = θ₁x₁ − θ₂x₁x₂`, `ẋ₂ = −θ₃x₂ + θ₄x₁x₂`.
pub fn lotka_volterra() -> Benchmark {
    let spec = build(
        "lv",
        vec![20.0, 20.0],
        5.0,
        vec![
            vec![Term::new(0, 1.0, &[0])],
            vec![Term::new(0, -1.0, &[0, 1])],
            vec![Term::new(1, -1.0, &[1])],
            vec![Term::new(1, 1.0, &[0, 1])],
        ],
        |x, th| {
            vec![
                th[0] * x[0] - th[1] * x[0] * x[1],
                -th[2] * x[1] + th[3] * x[0] * x[1],
            ]
        },
    );
    Benchmark {
        label: "lv".into(),
        spec,
        theta_star: vec![1.0, 0.1, 0.1, 1.0],
        theta0: vec![0.8, 0.2, 0.05, 1.1],
        data_times: (1..=9).map(|i| 0.5 * i as f64).collect(),
        noise_var: 0.01,
        step: 0.05,
        burn_in: 45,
    }
}

const SIGNALLING_TIMES: [f64; 14] = [
    1.0, 2.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0,
];

/// Protein signalling transduction with the Michaelis–Menten factor dropped.
/// States `[S, dS, R, RS, Rpp]`.
pub fn pst_linearized() -> Benchmark {
    let spec = build(
        "pst",
        vec![1.0, 0.0, 1.0, 0.0, 0.0],
        100.0,
        vec![
            vec![Term::new(0, -1.0, &[0]), Term::new(1, 1.0, &[0])],
            vec![
                Term::new(0, -1.0, &[0, 2]),
                Term::new(2, -1.0, &[0, 2]),
                Term::new(3, 1.0, &[0, 2]),
            ],
            vec![
                Term::new(0, 1.0, &[3]),
                Term::new(2, 1.0, &[3]),
                Term::new(3, -1.0, &[3]),
            ],
            vec![Term::new(3, -1.0, &[3]), Term::new(4, 1.0, &[3])],
            vec![Term::new(2, 1.0, &[4]), Term::new(4, -1.0, &[4])],
        ],
        |x, th| {
            vec![
                -th[0] * x[0] - th[1] * x[0] * x[2] + th[2] * x[3],
                th[0] * x[0],
                -th[1] * x[0] * x[2] + th[2] * x[3] + th[4] * x[4],
                th[1] * x[0] * x[2] - th[2] * x[3] - th[3] * x[3],
                th[3] * x[3] - th[4] * x[4],
            ]
        },
    );
    Benchmark {
        label: "pst".into(),
        spec,
        theta_star: vec![0.07, 0.6, 0.05, 0.3, 0.017],
        theta0: vec![0.24, 1.8, 0.15, 0.9, 0.05],
        data_times: SIGNALLING_TIMES.to_vec(),
        noise_var: 1e-8,
        step: 0.05,
        burn_in: 100,
    }
}

// State order of the glucose uptake system.
const GLC_E: usize = 0;
const GLC_I: usize = 1;
const E_G6P_I: usize = 2;
const E_GLC_G6P_I: usize = 3;
const G6P_I: usize = 4;
const E_GLC_E: usize = 5;
const E_GLC_I: usize = 6;
const E_E: usize = 7;
const E_I: usize = 8;

fn guiy_direct(x: &[f64], th: &[f64]) -> Vec<f64> {
    let [k1, km1, k2, km2, k3, km3, k4, km4, alpha, beta] = th[..10] else {
        unreachable!("ten parameters")
    };
    let bind_e = k1 * x[E_E] * x[GLC_E] - km1 * x[E_GLC_E];
    let bind_i = k2 * x[E_I] * x[GLC_I] - km2 * x[E_GLC_I];
    let complex = k3 * x[E_GLC_I] * x[G6P_I] - km3 * x[E_GLC_G6P_I];
    vec![
        -bind_e,
        -bind_i,
        k4 * x[E_I] * x[G6P_I] + km4 * x[E_G6P_I],
        complex,
        -complex - k4 * x[E_I] * x[G6P_I] + km4 * x[E_GLC_I],
        alpha * (x[E_GLC_I] - x[E_GLC_E]) + bind_e,
        alpha * (x[E_GLC_E] - x[E_GLC_I]) - complex + bind_i,
        beta * (x[E_I] - x[E_E]) - bind_e,
        beta * (x[E_E] - x[E_I]) - k4 * x[E_I] * x[G6P_I] + km4 * x[E_G6P_I] - bind_i,
    ]
}

/// Glucose uptake in yeast: nine species, ten mass-action rate constants
/// `[k₁, k₋₁, k₂, k₋₂, k₃, k₋₃, k₄, k₋₄, α, β]`.
///
/// The exchange terms use `α (x_other − x_self)`, matching the `β` terms.
pub fn guiy() -> Benchmark {
    let t = Term::new;
    let columns = vec![
        // k1
        vec![
            t(GLC_E, -1.0, &[E_E, GLC_E]),
            t(E_GLC_E, 1.0, &[E_E, GLC_E]),
            t(E_E, -1.0, &[E_E, GLC_E]),
        ],
        // k-1
        vec![
            t(GLC_E, 1.0, &[E_GLC_E]),
            t(E_GLC_E, -1.0, &[E_GLC_E]),
            t(E_E, 1.0, &[E_GLC_E]),
        ],
        // k2
        vec![
            t(GLC_I, -1.0, &[E_I, GLC_I]),
            t(E_GLC_I, 1.0, &[E_I, GLC_I]),
            t(E_I, -1.0, &[E_I, GLC_I]),
        ],
        // k-2
        vec![
            t(GLC_I, 1.0, &[E_GLC_I]),
            t(E_GLC_I, -1.0, &[E_GLC_I]),
            t(E_I, 1.0, &[E_GLC_I]),
        ],
        // k3
        vec![
            t(E_GLC_G6P_I, 1.0, &[E_GLC_I, G6P_I]),
            t(G6P_I, -1.0, &[E_GLC_I, G6P_I]),
            t(E_GLC_I, -1.0, &[E_GLC_I, G6P_I]),
        ],
        // k-3
        vec![
            t(E_GLC_G6P_I, -1.0, &[E_GLC_G6P_I]),
            t(G6P_I, 1.0, &[E_GLC_G6P_I]),
            t(E_GLC_I, 1.0, &[E_GLC_G6P_I]),
        ],
        // k4
        vec![
            t(E_G6P_I, 1.0, &[E_I, G6P_I]),
            t(G6P_I, -1.0, &[E_I, G6P_I]),
            t(E_I, -1.0, &[E_I, G6P_I]),
        ],
        // k-4
        vec![
            t(E_G6P_I, 1.0, &[E_G6P_I]),
            t(G6P_I, 1.0, &[E_GLC_I]),
            t(E_I, 1.0, &[E_G6P_I]),
        ],
        // alpha
        vec![
            t(E_GLC_E, 1.0, &[E_GLC_I]),
            t(E_GLC_E, -1.0, &[E_GLC_E]),
            t(E_GLC_I, 1.0, &[E_GLC_E]),
            t(E_GLC_I, -1.0, &[E_GLC_I]),
        ],
        // beta
        vec![
            t(E_E, 1.0, &[E_I]),
            t(E_E, -1.0, &[E_E]),
            t(E_I, 1.0, &[E_E]),
            t(E_I, -1.0, &[E_I]),
        ],
    ];
    let spec = build("guiy", vec![1.0; 9], 100.0, columns, guiy_direct);
    let theta_star = vec![0.1, 0.0, 0.4, 0.0, 0.3, 0.0, 0.7, 0.0, 0.1, 0.2];
    let theta0 = theta_star.iter().map(|v| 1.2 * v).collect();
    Benchmark {
        label: "guiy".into(),
        spec,
        theta_star,
        theta0,
        data_times: SIGNALLING_TIMES.to_vec(),
        noise_var: 1e-5,
        step: 0.05,
        burn_in: 30,
    }
}

pub const BENCHMARK_NAMES: [&str; 5] = ["logistic", "lv", "pst", "guiy", "constant"];

pub fn by_name(name: &str) -> Result<Benchmark> {
    match name {
        "logistic" => Ok(logistic()),
        "lv" => Ok(lotka_volterra()),
        "pst" => Ok(pst_linearized()),
        "guiy" => Ok(guiy()),
        "constant" => Ok(constant_rate()),
        other => Err(Error::Domain(format!(
            "unknown benchmark '{other}' (expected one of {})",
            BENCHMARK_NAMES.join(", ")
        ))),
    }
}

/// Reference solution at the data times plus `N(0, noise_var)` noise, stacked
/// dimension-major. `noise_var = 0` returns the clean reference solution.
pub fn generate_observations<R: Rng + ?Sized>(
    benchmark: &Benchmark,
    noise_var: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::Domain(format!(
            "noise variance must be >= 0, got {noise_var}"
        )));
    }
    let states = reference::solve(
        &benchmark.spec,
        &benchmark.theta_star,
        &benchmark.data_times,
        Tolerance::default(),
    )?;
    let m = benchmark.data_times.len();
    let sd = noise_var.sqrt();
    let mut z = DVector::zeros(m * benchmark.spec.dim());
    for dim in 0..benchmark.spec.dim() {
        for (i, state) in states.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            z[dim * m + i] = state[dim] + sd * eps;
        }
    }
    Ok(z)
}

pub fn generate_data<R: Rng + ?Sized>(benchmark: &Benchmark, rng: &mut R) -> Result<Dataset> {
    let z = generate_observations(benchmark, benchmark.noise_var, rng)?;
    Dataset::new(
        benchmark.data_times.clone(),
        z,
        NoiseModel::Scalar(benchmark.noise_var),
    )
}

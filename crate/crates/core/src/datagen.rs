//! Ground-truth instances and observation streams for the experiments.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ImopError, Result};
use crate::linalg::Matrix;
use crate::model::{build_instance, MopInstance, Observation, ParamSpec, RawInstance};
use crate::scalarize::{sample_truncated_normal_weights, solve_pws_with, PwsOptions, WeightVector};
use crate::Scalar;

/// Objective data of the two-variable MQP: `(Q_1, c_1), (Q_2, c_2)`.
pub const MQP_Q: [[f64; 2]; 2] = [[1.0, 2.0], [2.0, 1.0]];
pub const MQP_C: [f64; 4] = [3.0, 1.0, -6.0, -5.0];
pub const MQP_A: [[f64; 2]; 2] = [[3.0, -1.0], [0.0, 1.0]];
pub const MQP_B: [f64; 2] = [6.0, 3.0];

fn lit_vec<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

fn lit_mat<S: Scalar>(rows: &[&[f64]]) -> Matrix<S> {
    let rows: Vec<Vec<S>> = rows.iter().map(|r| lit_vec(r)).collect();
    Matrix::from_rows(&rows).expect("constant matrix is rectangular")
}

fn mqp_raw<S: Scalar>() -> RawInstance<S> {
    RawInstance {
        objectives: vec![
            (Matrix::diag(&lit_vec(&MQP_Q[0])), lit_vec(&MQP_C[..2])),
            (Matrix::diag(&lit_vec(&MQP_Q[1])), lit_vec(&MQP_C[2..])),
        ],
        a: lit_mat(&[&MQP_A[0], &MQP_A[1]]),
        b: lit_vec(&MQP_B),
        strongly_convex: true,
    }
}

/// MQP with unknown `(c_1, c_2) ∈ [1,6]² × [-6,-1]²`.
pub fn mqp_objective_instance<S: Scalar>() -> Result<MopInstance<S>> {
    let spec = ParamSpec::objective_linear(2, 2, lit_vec(&[1.0, 1.0, -6.0, -6.0]), lit_vec(&[6.0, 6.0, -1.0, -1.0]))?;
    build_instance(mqp_raw(), spec)
}

/// MQP with unknown `b ∈ [0,10]²`.
pub fn mqp_rhs_instance<S: Scalar>() -> Result<MopInstance<S>> {
    let spec = ParamSpec::rhs(lit_vec(&[0.0, 0.0]), lit_vec(&[10.0, 10.0]))?;
    build_instance(mqp_raw(), spec)
}

/// One-variable instance `f_l = x² - 2 θ_l x` on `0 ≤ x ≤ 10`, with
/// `θ ∈ [0,10]²` entering as `c_l = -2 θ_l`.
pub fn quadratic_1d_instance<S: Scalar>(theta: [f64; 2]) -> Result<MopInstance<S>> {
    let two = S::lit(2.0);
    let raw = RawInstance {
        objectives: vec![
            (Matrix::diag(&[two]), vec![S::lit(-2.0 * theta[0])]),
            (Matrix::diag(&[two]), vec![S::lit(-2.0 * theta[1])]),
        ],
        a: Matrix::diag(&[S::one()]),
        b: vec![S::lit(10.0)],
        strongly_convex: true,
    };
    let mut map = Matrix::identity(2);
    map = map.scaled(-two);
    let spec = ParamSpec::objective_affine(map, vec![S::zero(); 2], vec![S::zero(); 2], vec![S::lit(10.0); 2])?;
    let inst = build_instance(raw, spec)?;
    // validates θ against the box
    inst.substitute(&lit_vec(&theta))
}

/// Expected returns and covariances of the eight securities.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioData {
    pub r: [f64; 8],
    pub q: [[f64; 8]; 8],
    pub upper: [f64; 8],
}

impl PortfolioData {
    pub fn table() -> Self {
        Self {
            r: [0.1791, 0.1143, 0.1357, 0.0837, 0.1653, 0.1808, 0.0352, 0.0368],
            q: [
                [0.1641, 0.0299, 0.0478, 0.0491, 0.058, 0.0871, 0.0603, 0.0492],
                [0.0299, 0.0720, 0.0511, 0.0287, 0.0527, 0.0297, 0.0291, 0.0326],
                [0.0478, 0.0511, 0.0794, 0.0498, 0.0664, 0.0479, 0.0395, 0.0523],
                [0.0491, 0.0287, 0.0498, 0.1148, 0.0336, 0.0503, 0.0326, 0.0447],
                [0.0580, 0.0527, 0.0664, 0.0336, 0.1073, 0.0483, 0.0402, 0.0533],
                [0.0871, 0.0297, 0.0479, 0.0503, 0.0483, 0.1134, 0.0591, 0.0387],
                [0.0603, 0.0291, 0.0395, 0.0326, 0.0402, 0.0591, 0.0704, 0.0244],
                [0.0492, 0.0326, 0.0523, 0.0447, 0.0533, 0.0387, 0.0244, 0.1028],
            ],
            upper: [1.0; 8],
        }
    }
}

/// Number of securities whose expected return is learned.
pub const PORTFOLIO_UNKNOWN: usize = 5;

/// Upper end of the hypothesis box for each unknown return.
pub const PORTFOLIO_RETURN_CAP: f64 = 0.5;

/// Markowitz model `min (-rᵀx, xᵀQx)` over `{0 ≤ x ≤ u, Σx = 1}` in the
/// reduced variables `z = x_{1..7}`, with `x_8 = 1 - Σz` eliminated:
///
/// ```text
///     f_1 = -(r_{1..7} - r_8)ᵀz            (constant -r_8 dropped)
///     f_2 = zᵀ EᵀQE z + 2 (EᵀQ e_8)ᵀ z     (constant Q_88 dropped)
///     z_i ≤ u_i,  1ᵀz ≤ 1,  z ≥ 0         (1ᵀz ≥ 1 - u_8 is implied when u_8 ≥ 1)
/// ```
///
/// θ holds `r_1..r_5`; the other returns are fixed at their true values.
pub fn portfolio_instance<S: Scalar>(data: &PortfolioData) -> Result<MopInstance<S>> {
    let n = 7;
    if data.upper[7] < 1.0 {
        return Err(ImopError::InvalidParameter("the reduced encoding needs u_8 >= 1".into()));
    }
    let r8 = data.r[7];
    // EᵀQE and EᵀQe_8 with E = [I_7; -1ᵀ]
    let qe = |i: usize, j: usize| data.q[i][j] - data.q[i][7] - data.q[7][j] + data.q[7][7];
    let mut q2 = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            q2[(i, j)] = S::lit(2.0 * qe(i, j));
        }
    }
    let c2: Vec<S> = (0..n).map(|i| S::lit(2.0 * (data.q[i][7] - data.q[7][7]))).collect();
    let c1: Vec<S> = (0..n).map(|i| S::lit(-(data.r[i] - r8))).collect();

    let mut a = Matrix::zeros(n + 1, n);
    let mut b = Vec::with_capacity(n + 1);
    for i in 0..n {
        a[(i, i)] = S::one();
        b.push(S::lit(data.upper[i]));
    }
    for j in 0..n {
        a[(n, j)] = S::one();
    }
    b.push(S::one());

    let mut map = Matrix::zeros(2 * n, PORTFOLIO_UNKNOWN);
    let mut offset = c1.clone();
    offset.extend(c2.iter().copied());
    for i in 0..PORTFOLIO_UNKNOWN {
        map[(i, i)] = -S::one();
        offset[i] = S::lit(r8);
    }
    let spec = ParamSpec::objective_affine(
        map,
        offset,
        vec![S::zero(); PORTFOLIO_UNKNOWN],
        vec![S::lit(PORTFOLIO_RETURN_CAP); PORTFOLIO_UNKNOWN],
    )?;
    let raw = RawInstance { objectives: vec![(Matrix::zeros(n, n), c1), (q2, c2)], a, b, strongly_convex: false };
    build_instance(raw, spec)
}

/// True value of the portfolio parameter block.
pub fn portfolio_truth(data: &PortfolioData) -> Vec<f64> {
    data.r[..PORTFOLIO_UNKNOWN].to_vec()
}

/// Full eight-security portfolio from reduced variables.
pub fn portfolio_lift<S: Scalar>(z: &[S]) -> Vec<S> {
    let mut x = z.to_vec();
    x.push(S::one() - z.iter().copied().sum::<S>());
    x
}

/// Observations paired with the weights that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream<S> {
    pub observations: Vec<Observation<S>>,
    pub weights: Vec<WeightVector<S>>,
    /// Noiseless decisions.
    pub decisions: Vec<Vec<S>>,
}

/// `y_t = S(w_t, θ) + ε_t` with `ε` uniform on `[-h, h]ⁿ`, rounds numbered
/// from 1.
pub fn gen_stream<S: Scalar, R: Rng + ?Sized>(
    truth: &MopInstance<S>,
    weights: Vec<WeightVector<S>>,
    halfwidth: f64,
    rng: &mut R,
) -> Result<Stream<S>> {
    if !(halfwidth >= 0.0) {
        return Err(ImopError::InvalidParameter(format!("noise half-width {halfwidth} is negative")));
    }
    let opts = PwsOptions::default();
    let mut observations = Vec::with_capacity(weights.len());
    let mut decisions = Vec::with_capacity(weights.len());
    for (t, w) in weights.iter().enumerate() {
        let x = solve_pws_with(truth, w, &opts)?.x;
        let y = x
            .iter()
            .map(|&v| if halfwidth > 0.0 { v + S::lit(rng.random_range(-halfwidth..=halfwidth)) } else { v })
            .collect();
        observations.push(Observation::new(t + 1, y));
        decisions.push(x);
    }
    Ok(Stream { observations, weights, decisions })
}

fn uniform_weights<S: Scalar, R: Rng + ?Sized>(t: usize, rng: &mut R) -> Result<Vec<WeightVector<S>>> {
    let delta = S::lit(crate::scalarize::DEFAULT_INTERIOR_OFFSET);
    (0..t)
        .map(|_| {
            let u = S::lit(rng.random::<f64>());
            WeightVector::new(vec![u, S::one() - u], delta)
        })
        .collect()
}

fn check_rounds(t: usize) -> Result<()> {
    if t == 0 {
        return Err(ImopError::InvalidParameter("stream length must be at least 1".into()));
    }
    Ok(())
}

/// Stream from the true two-variable MQP with weights uniform on the
/// simplex.
pub fn gen_mqp_stream<S: Scalar>(t: usize, halfwidth: f64, seed: u64) -> Result<Stream<S>> {
    check_rounds(t)?;
    let truth = mqp_objective_instance::<S>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = uniform_weights(t, &mut rng)?;
    gen_stream(&truth, weights, halfwidth, &mut rng)
}

/// Stream from the one-variable instance with true parameter `theta`.
pub fn gen_quadratic_1d_stream<S: Scalar>(theta: [f64; 2], t: usize, halfwidth: f64, seed: u64) -> Result<Stream<S>> {
    check_rounds(t)?;
    let truth = quadratic_1d_instance::<S>(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = uniform_weights(t, &mut rng)?;
    gen_stream(&truth, weights, halfwidth, &mut rng)
}

/// Portfolio decisions under truncated-normal(0.5, 0.1) weights, rounded
/// to three decimals. Observations are full eight-security portfolios; use
/// [`portfolio_reduce`] before learning.
pub fn gen_portfolio_stream<S: Scalar>(data: &PortfolioData, t: usize, seed: u64) -> Result<Stream<S>> {
    check_rounds(t)?;
    let truth = portfolio_instance::<S>(data)?;
    let weights = sample_truncated_normal_weights::<S>(t, 0.5, 0.1, seed)?;
    let opts = PwsOptions::default();
    let mut observations = Vec::with_capacity(t);
    let mut decisions = Vec::with_capacity(t);
    let thousand = S::lit(1000.0);
    for (i, w) in weights.iter().enumerate() {
        let x = portfolio_lift(&solve_pws_with(&truth, w, &opts)?.x);
        let y = x.iter().map(|&v| (v * thousand).round() / thousand).collect();
        observations.push(Observation::new(i + 1, y));
        decisions.push(x);
    }
    Ok(Stream { observations, weights, decisions })
}

/// Drops the eighth security, giving observations in reduced variables.
pub fn portfolio_reduce<S: Scalar>(observations: &[Observation<S>]) -> Result<Vec<Observation<S>>> {
    observations
        .iter()
        .map(|o| {
            if o.y.len() != 8 {
                return Err(ImopError::DimensionMismatch(format!("round {}: portfolio of length {}", o.t, o.y.len())));
            }
            Ok(Observation::new(o.t, o.y[..7].to_vec()))
        })
        .collect()
}

/// Writes `t,y1,..,yn` rows with shortest round-trip floats.
pub fn write_observations<S: Scalar, W: Write>(observations: &[Observation<S>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = observations.first().map_or(0, |o| o.y.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("y{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for o in observations {
        let mut rec = vec![o.t.to_string()];
        rec.extend(o.y.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads observations written by [`write_observations`]. Errors name the
/// offending line (the header is line 1).
pub fn read_observations<S: Scalar, R: Read>(input: R) -> Result<Vec<Observation<S>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header_len = reader.headers().map_err(csv_error)?.len();
    if header_len < 2 {
        return Err(ImopError::Parse { line: 1, message: "header needs t and at least one coordinate".into() });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| ImopError::Parse { line, message };
        if record.len() != header_len {
            return Err(bad(format!("expected {header_len} fields, found {}", record.len())));
        }
        let t: usize = record[0].parse().map_err(|e| bad(format!("round index {:?}: {e}", &record[0])))?;
        let y = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map(S::lit).map_err(|e| bad(format!("value {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(Observation::new(t, y));
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> ImopError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ImopError::Io(io),
        kind => ImopError::Parse { line, message: format!("{kind:?}") },
    }
}

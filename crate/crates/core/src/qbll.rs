//! Kernel-weighted Normal-Gamma regressions with time-varying coefficients,
//! and the dynamic Fama-MacBeth estimator built on them.
//!
//! For each target period `s` the likelihood is reweighted by a Gaussian
//! kernel centered at `s`, combined with a conjugate Normal-Gamma prior, and
//! sampled independently of every other `s`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crosssection::predictive_pairs;
use crate::error::{Error, Result};
use crate::factors::FactorMatrix;
use crate::ingest::ReturnPanel;
use crate::linalg::{cholesky_checked, cholesky_solve, mean, mean_std_error, ols};

/// How the effective sample size is computed from the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZetaMode {
    /// `1 / Σ w̃²` over normalized weights; equals `T` for a flat kernel.
    #[default]
    Normalized,
    /// `1 / Σ w²` over the raw kernel values.
    Literal,
}

/// Posterior shape update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeUpdate {
    /// `α₀ + Σ_t ϑ_{s,t}`.
    #[default]
    FullTrace,
    /// `α₀ + ½ Σ_t ϑ_{s,t}`, the standard conjugate update.
    HalfTrace,
}

pub fn gaussian_kernel(s: usize, t: usize, h: f64) -> f64 {
    let u = (s as f64 - t as f64) / h;
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Kernel weights for every target period of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub t: usize,
    pub h: f64,
    pub mode: ZetaMode,
    /// `zeta[s]`: effective sample size at `s`.
    pub zeta: Vec<f64>,
    /// `theta[(s, t)] = zeta[s] · w̃_{s,t}`.
    pub theta: DMatrix<f64>,
}

impl KernelWeights {
    pub fn new(t: usize, h: f64, mode: ZetaMode) -> Result<KernelWeights> {
        if t == 0 || !(h > 0.0) || !h.is_finite() {
            return Err(Error::Config(format!("kernel needs T ≥ 1 and H > 0 (T={t}, H={h})")));
        }
        let mut theta = DMatrix::<f64>::zeros(t, t);
        let mut zeta = vec![0.0; t];
        for s in 0..t {
            let raw: Vec<f64> = (0..t).map(|u| gaussian_kernel(s, u, h)).collect();
            let total: f64 = raw.iter().sum();
            let z = match mode {
                ZetaMode::Normalized => 1.0 / raw.iter().map(|w| (w / total).powi(2)).sum::<f64>(),
                ZetaMode::Literal => 1.0 / raw.iter().map(|w| w * w).sum::<f64>(),
            };
            zeta[s] = z;
            for u in 0..t {
                theta[(s, u)] = z * raw[u] / total;
            }
        }
        Ok(KernelWeights { t, h, mode, zeta, theta })
    }

    /// Default bandwidth `√T`.
    pub fn default_bandwidth(t: usize) -> f64 {
        (t as f64).sqrt()
    }

    pub fn raw(&self, s: usize, t: usize) -> f64 {
        gaussian_kernel(s, t, self.h)
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.theta.row(s).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub beta0: DVector<f64>,
    pub kappa0: DMatrix<f64>,
    pub alpha0: f64,
    pub gamma0: f64,
}

impl Prior {
    /// Full-sample least-squares prior: `β₀` the OLS fit, `κ₀ = scale ·
    /// diag(X'X / T)`, `α₀ = 1`, `γ₀` the residual variance.
    ///
    /// `x` is the full design, intercept column included if wanted.
    pub fn from_ols(y: &DVector<f64>, x: &DMatrix<f64>, scale: f64) -> Result<Prior> {
        let (n, k) = x.shape();
        if n <= k {
            return Err(Error::InsufficientData { needed: k + 1, got: n });
        }
        let l = cholesky_checked(&x.tr_mul(x))
            .map_err(|j| Error::Rank(format!("prior design is rank deficient at column {j}")))?;
        let beta0 = cholesky_solve(&l, &x.tr_mul(y));
        let resid = y - x * &beta0;
        let gamma0 = resid.norm_squared() / (n - k) as f64;
        let kappa0 = DMatrix::from_diagonal(&DVector::from_fn(k, |j, _| {
            scale * x.column(j).norm_squared() / n as f64
        }));
        Ok(Prior {
            beta0,
            kappa0,
            alpha0: 1.0,
            gamma0: gamma0.max(f64::MIN_POSITIVE),
        })
    }

    pub fn diffuse(k: usize, precision: f64) -> Prior {
        Prior {
            beta0: DVector::zeros(k),
            kappa0: DMatrix::identity(k, k) * precision,
            alpha0: 1.0,
            gamma0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalGammaPosterior {
    pub beta_bar: DVector<f64>,
    pub kappa_bar: DMatrix<f64>,
    pub alpha_bar: f64,
    pub gamma_bar: f64,
    /// Cholesky factor of `kappa_bar`.
    pub(crate) chol: DMatrix<f64>,
}

/// Kernel-weighted sufficient statistics at one target period.
struct Weighted {
    xdx: DMatrix<f64>,
    xdy: DVector<f64>,
    ydy: f64,
    sum_theta: f64,
}

fn posterior_from(w: Weighted, prior: &Prior, shape: ShapeUpdate, s: usize) -> Result<NormalGammaPosterior> {
    cholesky_checked(&w.xdx).map_err(|j| {
        Error::Rank(format!("weighted design is singular at period {s} (column {j})"))
    })?;
    let kappa_bar = &prior.kappa0 + &w.xdx;
    let chol = cholesky_checked(&kappa_bar)
        .map_err(|_| Error::Rank(format!("posterior precision is not positive definite at period {s}")))?;
    let k0b0 = &prior.kappa0 * &prior.beta0;
    let beta_bar = cholesky_solve(&chol, &(&w.xdy + &k0b0));
    // y'Dy − β̄'κ̄β̄ + β₀'κ₀β₀ rewritten as a sum of two nonnegative quadratic
    // forms so it cannot go negative through cancellation.
    let d = &beta_bar - &prior.beta0;
    let resid_q = w.ydy - 2.0 * beta_bar.dot(&w.xdy) + beta_bar.dot(&(&w.xdx * &beta_bar));
    let quad = resid_q.max(0.0) + d.dot(&(&prior.kappa0 * &d));
    let alpha_bar = prior.alpha0
        + match shape {
            ShapeUpdate::FullTrace => w.sum_theta,
            ShapeUpdate::HalfTrace => 0.5 * w.sum_theta,
        };
    Ok(NormalGammaPosterior {
        beta_bar,
        kappa_bar,
        alpha_bar,
        gamma_bar: prior.gamma0 + 0.5 * quad,
        chol,
    })
}

/// Posterior at one target period from the weight row `theta` (`ϑ_{s,·}`).
pub fn local_posterior(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    theta: &[f64],
    prior: &Prior,
    shape: ShapeUpdate,
) -> Result<NormalGammaPosterior> {
    let (n, k) = x.shape();
    assert_eq!(theta.len(), n, "weight row and design lengths differ");
    let mut xdx = DMatrix::<f64>::zeros(k, k);
    let mut xdy = DVector::<f64>::zeros(k);
    let mut ydy = 0.0;
    for t in 0..n {
        let w = theta[t];
        let row = x.row(t);
        for a in 0..k {
            xdy[a] += w * row[a] * y[t];
            for b in 0..=a {
                xdx[(a, b)] += w * row[a] * row[b];
            }
        }
        ydy += w * y[t] * y[t];
    }
    fill_upper(&mut xdx);
    let w = Weighted {
        xdx,
        xdy,
        ydy,
        sum_theta: theta.iter().sum(),
    };
    posterior_from(w, prior, shape, 0)
}

fn fill_upper(m: &mut DMatrix<f64>) {
    for a in 0..m.nrows() {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Posteriors at every period. Rows with `mask[t] == false` carry no weight.
pub fn local_posteriors(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    mask: Option<&[bool]>,
    kernel: &KernelWeights,
    prior: &Prior,
    shape: ShapeUpdate,
) -> Result<Vec<NormalGammaPosterior>> {
    let (n, k) = x.shape();
    if n != kernel.t || y.len() != n {
        return Err(Error::Config(format!(
            "kernel built for T={} but data has {n} rows",
            kernel.t
        )));
    }
    // Columns: x_a x_b (a ≥ b), x_a y, y², 1; all masked.
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..=a).map(move |b| (a, b))).collect();
    let m = pairs.len() + k + 2;
    let mut stats = DMatrix::<f64>::zeros(n, m);
    for t in 0..n {
        if mask.is_some_and(|mk| !mk[t]) {
            continue;
        }
        let row = x.row(t);
        for (c, &(a, b)) in pairs.iter().enumerate() {
            stats[(t, c)] = row[a] * row[b];
        }
        for a in 0..k {
            stats[(t, pairs.len() + a)] = row[a] * y[t];
        }
        stats[(t, m - 2)] = y[t] * y[t];
        stats[(t, m - 1)] = 1.0;
    }
    let weighted = &kernel.theta * stats;
    (0..n)
        .map(|s| {
            let r = weighted.row(s);
            let mut xdx = DMatrix::<f64>::zeros(k, k);
            for (c, &(a, b)) in pairs.iter().enumerate() {
                xdx[(a, b)] = r[c];
            }
            fill_upper(&mut xdx);
            let w = Weighted {
                xdx,
                xdy: DVector::from_fn(k, |a, _| r[pairs.len() + a]),
                ydy: r[m - 2],
                sum_theta: r[m - 1],
            };
            posterior_from(w, prior, shape, s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvpConfig {
    /// Bandwidth; `None` uses `√T`.
    pub bandwidth: Option<f64>,
    pub draws: usize,
    /// Share of extra initial draws discarded per period.
    pub burn_in: f64,
    pub seed: u64,
    pub zeta: ZetaMode,
    pub shape: ShapeUpdate,
    /// Prior precision scale relative to the regressor second moments.
    pub prior_scale: f64,
    /// Average sampled draws for stage-1 loadings instead of using the
    /// closed-form posterior mean.
    pub sampled_loadings: bool,
    pub min_coverage: f64,
}

impl Default for TvpConfig {
    fn default() -> Self {
        TvpConfig {
            bandwidth: None,
            draws: 1000,
            burn_in: 0.1,
            seed: 42,
            zeta: ZetaMode::Normalized,
            shape: ShapeUpdate::FullTrace,
            prior_scale: 0.01,
            sampled_loadings: false,
            min_coverage: 0.6,
        }
    }
}

impl TvpConfig {
    pub fn bandwidth_for(&self, t: usize) -> f64 {
        match self.bandwidth {
            Some(h) if h > 0.0 => h,
            _ => KernelWeights::default_bandwidth(t),
        }
    }

    fn burn(&self) -> usize {
        (self.burn_in.max(0.0) * self.draws as f64).ceil() as usize
    }
}

/// Post-burn-in draws for every period.
#[derive(Debug, Clone, PartialEq)]
pub struct TvpDraws {
    pub k: usize,
    pub draws: usize,
    /// `beta[s]`: `draws × k`, row-major.
    pub beta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

impl TvpDraws {
    pub fn n_periods(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_draw(&self, s: usize, i: usize) -> &[f64] {
        &self.beta[s][i * self.k..(i + 1) * self.k]
    }

    fn coord(&self, s: usize, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.beta[s].iter().skip(j).step_by(self.k).copied()
    }

    /// Pointwise posterior mean, `T × k`.
    pub fn posterior_mean(&self) -> Vec<Vec<f64>> {
        (0..self.n_periods())
            .map(|s| (0..self.k).map(|j| self.coord(s, j).sum::<f64>() / self.draws as f64).collect())
            .collect()
    }

    pub fn posterior_sd(&self) -> Vec<Vec<f64>> {
        (0..self.n_periods())
            .map(|s| {
                (0..self.k)
                    .map(|j| {
                        let v: Vec<f64> = self.coord(s, j).collect();
                        crate::linalg::sample_sd(&v)
                    })
                    .collect()
            })
            .collect()
    }

    /// Pointwise empirical quantile (linear interpolation), `T × k`.
    pub fn quantile(&self, q: f64) -> Vec<Vec<f64>> {
        (0..self.n_periods())
            .map(|s| {
                (0..self.k)
                    .map(|j| {
                        let mut v: Vec<f64> = self.coord(s, j).collect();
                        v.sort_by(f64::total_cmp);
                        let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
                        let lo = pos.floor() as usize;
                        let hi = pos.ceil() as usize;
                        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
                    })
                    .collect()
            })
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `(β, λ)` pairs from one posterior: `λ ~ G(ᾱ, γ̄)` (shape, rate), then
/// `β ~ N(β̄, (λκ̄)⁻¹)`.
fn draw_posterior(post: &NormalGammaPosterior, n: usize, burn: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let k = post.beta_bar.len();
    let gamma = Gamma::new(post.alpha_bar, 1.0 / post.gamma_bar).expect("positive Gamma parameters");
    let lt = post.chol.transpose();
    let mut betas = Vec::with_capacity(n * k);
    let mut lambdas = Vec::with_capacity(n);
    for i in 0..burn + n {
        let lambda: f64 = gamma.sample(rng);
        let z = DVector::<f64>::from_fn(k, |_, _| StandardNormal.sample(rng));
        // κ̄ = L L', so β̄ + (√λ L')⁻¹ z has covariance (λ κ̄)⁻¹.
        let u = lt.solve_upper_triangular(&z).expect("nonsingular Cholesky factor");
        if i >= burn {
            let scale = lambda.sqrt().recip();
            betas.extend((0..k).map(|j| post.beta_bar[j] + scale * u[j]));
            lambdas.push(lambda.max(f64::MIN_POSITIVE));
        }
    }
    (betas, lambdas)
}

/// Runs the per-period sampler over all `T` periods of `(y, X)`.
pub fn sample_tvp(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    prior: &Prior,
    cfg: &TvpConfig,
) -> Result<TvpDraws> {
    if cfg.draws == 0 {
        return Err(Error::Config("draw count must be positive".into()));
    }
    let t = y.len();
    let kernel = KernelWeights::new(t, cfg.bandwidth_for(t), cfg.zeta)?;
    let posts = local_posteriors(y, x, None, &kernel, prior, cfg.shape)?;
    let burn = cfg.burn();
    let (beta, lambda): (Vec<_>, Vec<_>) = posts
        .par_iter()
        .enumerate()
        .map(|(s, p)| draw_posterior(p, cfg.draws, burn, &mut stream_rng(cfg.seed, s as u64)))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    Ok(TvpDraws {
        k: x.ncols(),
        draws: cfg.draws,
        beta,
        lambda,
    })
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    pub date: chrono::NaiveDate,
    pub lambda: Vec<f64>,
    /// Cross-sectional standard errors of `lambda`.
    pub post_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicEstimate {
    pub factor_names: Vec<String>,
    pub lambda_bar: Vec<f64>,
    pub tstats: Vec<f64>,
    pub omega_bar: f64,
    pub omega_t: f64,
    pub path: Vec<LambdaPath>,
    pub bandwidth: f64,
    pub seed: u64,
    pub n_assets: usize,
}

/// Stage 1 time-varying loadings for one asset on the pair calendar:
/// `T × (1 + K)` posterior means, or `None` if the asset is excluded.
fn asset_tvp_loadings(
    returns: &ReturnPanel,
    pairs: &[(usize, &[f64])],
    a: usize,
    kernel: &KernelWeights,
    cfg: &TvpConfig,
) -> Result<Option<Vec<DVector<f64>>>> {
    let t = pairs.len();
    let k = pairs[0].1.len();
    let mask: Vec<bool> = pairs.iter().map(|(p, _)| returns.get(*p, a).is_some()).collect();
    let observed = mask.iter().filter(|m| **m).count();
    if (observed as f64) < cfg.min_coverage * t as f64 || observed < k + 3 {
        log::info!("dynamic stage 1: {} excluded, {observed} of {t} rows", returns.assets[a]);
        return Ok(None);
    }
    let x = DMatrix::from_fn(t, k + 1, |i, j| if j == 0 { 1.0 } else { pairs[i].1[j - 1] });
    let y = DVector::from_fn(t, |i, _| returns.get(pairs[i].0, a).unwrap_or(0.0));
    let rows: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
    let prior = Prior::from_ols(&y.select_rows(&rows), &x.select_rows(&rows), cfg.prior_scale)?;
    let posts = local_posteriors(&y, &x, Some(&mask), kernel, &prior, cfg.shape)?;
    if !cfg.sampled_loadings {
        return Ok(Some(posts.into_iter().map(|p| p.beta_bar).collect()));
    }
    let burn = cfg.burn();
    Ok(Some(
        posts
            .iter()
            .enumerate()
            .map(|(s, p)| {
                let mut rng = stream_rng(cfg.seed, ((a as u64) << 32) | s as u64);
                let (b, _) = draw_posterior(p, cfg.draws, burn, &mut rng);
                DVector::from_fn(k + 1, |j, _| {
                    b.iter().skip(j).step_by(k + 1).sum::<f64>() / cfg.draws as f64
                })
            })
            .collect(),
    ))
}

/// Fama-MacBeth with kernel-weighted time-varying loadings.
///
/// Per period, returns `r_{t+1}` are regressed cross-sectionally on the
/// stage-1 loadings at `t`; `λ̄` is the time average of the per-period
/// premia with t-statistic `λ̄ / (sd(λ_t) / √T)`.
pub fn dynamic_fama_macbeth(
    returns: &ReturnPanel,
    factors: &FactorMatrix,
    cfg: &TvpConfig,
) -> Result<DynamicEstimate> {
    returns.check_shape()?;
    crate::crosssection::check_collinearity(factors)?;
    let k = factors.n_factors();
    let pairs = predictive_pairs(returns, factors);
    let t = pairs.len();
    if t < k + 3 {
        return Err(Error::InsufficientData { needed: k + 3, got: t });
    }
    let h = cfg.bandwidth_for(t);
    let kernel = KernelWeights::new(t, h, cfg.zeta)?;
    let loadings: Vec<Option<Vec<DVector<f64>>>> = (0..returns.n_assets())
        .into_par_iter()
        .map(|a| match asset_tvp_loadings(returns, &pairs, a, &kernel, cfg) {
            Ok(l) => Ok(l),
            Err(Error::Rank(msg)) => {
                log::warn!("dynamic stage 1: {} dropped: {msg}", returns.assets[a]);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let active: Vec<usize> = (0..loadings.len()).filter(|&a| loadings[a].is_some()).collect();
    if active.len() < k + 2 {
        return Err(Error::InsufficientData {
            needed: k + 2,
            got: active.len(),
        });
    }

    let per_period: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = (0..t)
        .into_par_iter()
        .map(|s| {
            let obs: Vec<(usize, f64)> = active
                .iter()
                .filter_map(|&a| returns.get(pairs[s].0, a).map(|r| (a, r)))
                .collect();
            if obs.len() < k + 2 {
                return None;
            }
            let b = DMatrix::from_fn(obs.len(), k, |i, j| {
                loadings[obs[i].0].as_ref().expect("active asset")[s][j + 1]
            });
            let r = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.1));
            match ols(&b, &r) {
                Ok(fit) => {
                    let se = fit.std_errors();
                    Some((
                        fit.intercept(),
                        fit.slopes().to_vec(),
                        (1..=k).map(|j| se[j]).collect(),
                    ))
                }
                Err(e) => {
                    log::warn!("dynamic stage 2: period {s} skipped: {e:?}");
                    None
                }
            }
        })
        .collect();

    let mut path = Vec::new();
    let mut omegas = Vec::new();
    for (s, res) in per_period.into_iter().enumerate() {
        if let Some((w, lambda, sd)) = res {
            omegas.push(w);
            path.push(LambdaPath {
                date: returns.dates[pairs[s].0 - 1],
                lambda,
                post_sd: sd,
            });
        }
    }
    if path.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: path.len() });
    }
    let series = |j: usize| -> Vec<f64> { path.iter().map(|p| p.lambda[j]).collect() };
    let lambda_bar: Vec<f64> = (0..k).map(|j| mean(&series(j))).collect();
    let tstats = (0..k)
        .map(|j| lambda_bar[j] / mean_std_error(&series(j), 0))
        .collect();
    let omega_bar = mean(&omegas);
    Ok(DynamicEstimate {
        factor_names: factors.names.clone(),
        lambda_bar,
        tstats,
        omega_bar,
        omega_t: omega_bar / mean_std_error(&omegas, 0),
        path,
        bandwidth: h,
        seed: cfg.seed,
        n_assets: active.len(),
    })
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && cholesky_checked(m).is_ok()
}

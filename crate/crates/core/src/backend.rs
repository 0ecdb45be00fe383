//! Scoring backend: LDA projection, length normalization, two-covariance
//! PLDA with EM training and log-likelihood-ratio scoring, and unsupervised
//! PLDA adaptation on unlabeled data.
//!
//! The PLDA generative model is `x = μ + y + ε` with speaker offset
//! `y ~ N(0, Σ_b)` shared across a speaker's embeddings and residual
//! `ε ~ N(0, Σ_w)` per embedding.

use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};

/// Backend model container magic.
pub const BACKEND_MAGIC: [u8; 4] = *b"MLPB";
/// Binary embedding archive magic.
pub const EMBEDDING_MAGIC: [u8; 4] = *b"MLPE";

// ── Small matrix helpers ────────────────────────────────────────────

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clamp eigenvalues from below; returns the repaired matrix and whether
/// anything actually changed.
fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut repaired = false;
    let vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v < floor {
                repaired = true;
                floor
            } else {
                v
            }
        })
        .collect();
    if !repaired {
        return (symmetrize(m), false);
    }
    let d = DMatrix::from_diagonal(&DVector::from_vec(vals));
    (symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose())), true)
}

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::Numeric(format!("{what} is not positive definite")))
}

fn ln_det(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

// ── LDA ─────────────────────────────────────────────────────────────

/// Linear discriminant projection. Rows of `projection` are ordered by
/// decreasing generalized eigenvalue and whitened so the projected
/// within-class covariance is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub mean: Vec<f64>,
    /// Row-major `p × d`.
    pub projection: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LdaModel {
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.in_dim {
            return Err(Error::Dimension(format!(
                "LDA expects dimension {}, got {}",
                self.in_dim,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.projection[r * self.in_dim..(r + 1) * self.in_dim];
            *o = row.iter().zip(v).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum();
        }
        Ok(out)
    }
}

/// Per-class first/second moments of labeled vectors.
struct ClassStats {
    count: usize,
    mean: DVector<f64>,
    /// Scatter about the class mean (unnormalized).
    scatter: DMatrix<f64>,
}

fn class_stats(data: &[(Vec<f64>, usize)], dim: usize) -> Vec<ClassStats> {
    let mut by_class: HashMap<usize, Vec<&Vec<f64>>> = HashMap::new();
    for (v, c) in data {
        by_class.entry(*c).or_default().push(v);
    }
    let mut classes: Vec<usize> = by_class.keys().copied().collect();
    classes.sort_unstable();
    classes
        .into_iter()
        .map(|c| {
            let vs = &by_class[&c];
            let mut mean = DVector::zeros(dim);
            for v in vs {
                mean += DVector::from_column_slice(v);
            }
            mean /= vs.len() as f64;
            let mut scatter = DMatrix::zeros(dim, dim);
            for v in vs {
                let d = DVector::from_column_slice(v) - &mean;
                scatter += &d * d.transpose();
            }
            ClassStats { count: vs.len(), mean, scatter }
        })
        .collect()
}

fn check_embedding_dims(data: &[(Vec<f64>, usize)]) -> Result<usize> {
    let dim = data
        .first()
        .map(|(v, _)| v.len())
        .ok_or_else(|| Error::DegenerateInput("no embeddings".into()))?;
    if dim == 0 || data.iter().any(|(v, _)| v.len() != dim) {
        return Err(Error::Dimension("embeddings have inconsistent dimensions".into()));
    }
    Ok(dim)
}

/// Train LDA by solving the generalized eigenproblem `S_b v = λ S_w v` with
/// a ridge on `S_w`, keeping the top `p` within-class-whitened directions.
pub fn lda_train(data: &[(Vec<f64>, usize)], p: usize) -> Result<LdaModel> {
    let dim = check_embedding_dims(data)?;
    let stats = class_stats(data, dim);
    let num_classes = stats.len();
    if num_classes < 2 {
        return Err(Error::DegenerateInput(format!(
            "LDA needs at least 2 speakers, got {num_classes}"
        )));
    }
    let rank_bound = dim.min(num_classes - 1);
    if p == 0 || p > rank_bound {
        return Err(Error::Config(format!(
            "LDA output dimension {p} exceeds the rank bound min(d, classes−1) = {rank_bound}"
        )));
    }
    let n_total: usize = stats.iter().map(|s| s.count).sum();
    let mut global = DVector::zeros(dim);
    for s in &stats {
        global += &s.mean * s.count as f64;
    }
    global /= n_total as f64;

    let mut sw = DMatrix::zeros(dim, dim);
    let mut sb = DMatrix::zeros(dim, dim);
    for s in &stats {
        sw += &s.scatter;
        let d = &s.mean - &global;
        sb += (&d * d.transpose()) * s.count as f64;
    }
    sw /= n_total as f64;
    sb /= n_total as f64;

    // Ridge keeps the within-class factorization well posed even when some
    // speakers contribute no scatter.
    let ridge = 1e-6 * sw.trace() / dim as f64;
    for i in 0..dim {
        sw[(i, i)] += ridge;
    }
    let chol = cholesky(&sw, "within-class scatter (after ridge)")?;
    let l = chol.l();
    // M = L⁻¹ S_b L⁻ᵀ, symmetric; its eigenvectors u map to v = L⁻ᵀ u with
    // vᵀ S_w v = 1 automatically.
    let t1 = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::Numeric("singular within-class factor".into()))?;
    let m = l
        .solve_lower_triangular(&t1.transpose())
        .ok_or_else(|| Error::Numeric("singular within-class factor".into()))?;
    let eig = nalgebra::SymmetricEigen::new(symmetrize(&m));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite"));

    let lt = l.transpose();
    let mut projection = Vec::with_capacity(p * dim);
    for &k in order.iter().take(p) {
        let u = eig.eigenvectors.column(k).into_owned();
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numeric("singular within-class factor".into()))?;
        projection.extend(v.iter());
    }
    Ok(LdaModel {
        mean: global.iter().copied().collect(),
        projection,
        in_dim: dim,
        out_dim: p,
    })
}

/// Scale a vector so its squared norm equals its dimension:
/// `v · √dim / ‖v‖`.
pub fn length_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateInput("cannot length-normalize the zero vector".into()));
    }
    let scale = (v.len() as f64).sqrt() / norm;
    Ok(v.iter().map(|x| x * scale).collect())
}

// ── PLDA ────────────────────────────────────────────────────────────

/// Two-covariance PLDA model over projected embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: Vec<f64>,
    pub dim: usize,
    /// Between-speaker covariance, row-major `dim × dim`, PSD.
    pub sigma_b: Vec<f64>,
    /// Within-speaker covariance, row-major `dim × dim`, PD.
    pub sigma_w: Vec<f64>,
}

/// Floors used when an M-step or adaptation loses definiteness.
fn pd_floor(trace: f64, p: usize) -> f64 {
    1e-8 * trace / p as f64
}

impl PldaModel {
    pub fn from_parts(
        mean: Vec<f64>,
        sigma_b: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
    ) -> Result<PldaModel> {
        let dim = mean.len();
        if sigma_b.nrows() != dim || sigma_w.nrows() != dim {
            return Err(Error::Dimension("PLDA covariance dimensions disagree".into()));
        }
        let (sigma_b, repaired_b) = floor_eigenvalues(&sigma_b, 0.0);
        let (sigma_w, repaired_w) = floor_eigenvalues(&sigma_w, pd_floor(sigma_w.trace(), dim));
        if repaired_b || repaired_w {
            log::warn!("PLDA covariance repaired by eigenvalue floor");
        }
        Ok(PldaModel {
            mean,
            dim,
            sigma_b: sigma_b.transpose().as_slice().to_vec(),
            sigma_w: sigma_w.transpose().as_slice().to_vec(),
        })
    }

    pub fn sigma_b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.sigma_b)
    }

    pub fn sigma_w_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.sigma_w)
    }

    /// One EM iteration from this model's parameters. The mean is held at
    /// the training-data mean (the data are centered by the caller).
    pub fn em_step(&self, data: &[(Vec<f64>, usize)]) -> Result<PldaModel> {
        let dim = self.dim;
        let centered: Vec<(Vec<f64>, usize)> = data
            .iter()
            .map(|(v, c)| (v.iter().zip(&self.mean).map(|(x, m)| x - m).collect(), *c))
            .collect();
        let stats = class_stats(&centered, dim);
        let n_total: usize = stats.iter().map(|s| s.count).sum();
        let sb = self.sigma_b_matrix();
        let sw = self.sigma_w_matrix();
        let sb_inv = cholesky(&sb.clone(), "Σ_b")
            .map(|c| c.inverse())
            .or_else(|_| {
                // A PSD-but-singular Σ_b gets a tiny ridge for the E-step.
                let mut r = sb.clone();
                let eps = pd_floor(r.trace().max(1e-12), dim).max(1e-12);
                for i in 0..dim {
                    r[(i, i)] += eps;
                }
                cholesky(&r, "ridged Σ_b").map(|c| c.inverse())
            })?;
        let sw_inv = cholesky(&sw, "Σ_w")?.inverse();

        let mut sb_new = DMatrix::zeros(dim, dim);
        let mut sw_new = DMatrix::zeros(dim, dim);
        for s in &stats {
            let n = s.count as f64;
            // Posterior over the speaker offset y.
            let precision = &sb_inv + &sw_inv * n;
            let p_cov = cholesky(&precision, "posterior precision")?.inverse();
            let y_hat = &p_cov * (&sw_inv * &s.mean) * n;
            sb_new += &p_cov + &y_hat * y_hat.transpose();
            let d = &s.mean - &y_hat;
            sw_new += &s.scatter + (&d * d.transpose() + &p_cov) * n;
        }
        sb_new /= stats.len() as f64;
        sw_new /= n_total as f64;
        PldaModel::from_parts(self.mean.clone(), sb_new, sw_new)
    }

    /// Marginal log-likelihood of the labeled data under this model.
    pub fn log_likelihood(&self, data: &[(Vec<f64>, usize)]) -> Result<f64> {
        let dim = self.dim;
        let centered: Vec<(Vec<f64>, usize)> = data
            .iter()
            .map(|(v, c)| (v.iter().zip(&self.mean).map(|(x, m)| x - m).collect(), *c))
            .collect();
        let stats = class_stats(&centered, dim);
        let sb = self.sigma_b_matrix();
        let sw = self.sigma_w_matrix();
        let sw_chol = cholesky(&sw, "Σ_w")?;
        let sw_inv = sw_chol.inverse();
        let ln_det_sw = ln_det(&sw_chol);
        let two_pi_term = (2.0 * std::f64::consts::PI).ln();

        // Per speaker: the scaled mean √n·m̄ is N(0, n·Σ_b + Σ_w) and the
        // n−1 deviation contrasts are i.i.d. N(0, Σ_w).
        let mut ll = 0.0;
        let mut mean_chols: HashMap<usize, (nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> =
            HashMap::new();
        for s in &stats {
            let n = s.count;
            let (chol, ldet) = match mean_chols.entry(n) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    let (c, d) = e.into_mut();
                    (&*c, *d)
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    let m = &sb * n as f64 + &sw;
                    let c = cholesky(&m, "n·Σ_b + Σ_w")?;
                    let d = ln_det(&c);
                    let (c, d2) = e.insert((c, d));
                    (&*c, *d2)
                }
            };
            let solved = chol.solve(&s.mean);
            let quad = n as f64 * s.mean.dot(&solved);
            ll += -0.5 * (dim as f64 * two_pi_term + ldet + quad);
            let dev_quad = (&sw_inv * &s.scatter).trace();
            ll += -0.5 * ((n - 1) as f64 * dim as f64 * two_pi_term
                + (n - 1) as f64 * ln_det_sw
                + dev_quad);
        }
        Ok(ll)
    }

    /// Precompute the trial-scoring form.
    pub fn scorer(&self) -> Result<PldaScorer> {
        let dim = self.dim;
        let sb = self.sigma_b_matrix();
        let sw = self.sigma_w_matrix();
        let total = &sb + &sw; // A
        let sum = &total + &sb; // A + B = Σ_w + 2Σ_b
        let diff = sw.clone(); // A − B = Σ_w

        let chol_total = cholesky(&total, "Σ_b + Σ_w")?;
        let chol_sum = cholesky(&sum, "Σ_w + 2Σ_b")?;
        let chol_diff = cholesky(&diff, "Σ_w")?;
        let total_inv = chol_total.inverse();
        let sum_inv = chol_sum.inverse();
        let diff_inv = chol_diff.inverse();

        let p = (&sum_inv + &diff_inv) * 0.5;
        let q = (&sum_inv - &diff_inv) * 0.5;
        let g = &p - &total_inv;
        let k = -0.5 * (ln_det(&chol_sum) + ln_det(&chol_diff) - 2.0 * ln_det(&chol_total));
        Ok(PldaScorer { mean: self.mean.clone(), dim, g, q, k })
    }
}

/// Precomputed bilinear form for pair log-likelihood ratios:
/// `score(e, t) = k − ½(ēᵀGē + t̄ᵀGt̄) − ēᵀQt̄` with centered vectors.
pub struct PldaScorer {
    mean: Vec<f64>,
    dim: usize,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
    k: f64,
}

impl PldaScorer {
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        if enroll.len() != self.dim || test.len() != self.dim {
            return Err(Error::Contract(format!(
                "PLDA scorer expects dimension {}, got {} and {}",
                self.dim,
                enroll.len(),
                test.len()
            )));
        }
        let e = DVector::from_iterator(
            self.dim,
            enroll.iter().zip(&self.mean).map(|(x, m)| x - m),
        );
        let t =
            DVector::from_iterator(self.dim, test.iter().zip(&self.mean).map(|(x, m)| x - m));
        let quad = e.dot(&(&self.g * &e)) + t.dot(&(&self.g * &t));
        let cross = e.dot(&(&self.q * &t));
        Ok(self.k - 0.5 * quad - cross)
    }
}

/// Score a single trial (convenience over building a scorer per pair).
pub fn plda_score(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    model.scorer()?.score(enroll, test)
}

/// Train the two-covariance model by EM from moment-based initialization.
/// Returns the model and the per-iteration log-likelihood sequence
/// (initialization first); the sequence is checked to be non-decreasing.
pub fn plda_train(data: &[(Vec<f64>, usize)], iters: usize) -> Result<(PldaModel, Vec<f64>)> {
    let dim = check_embedding_dims(data)?;
    let stats = class_stats(data, dim);
    if stats.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "PLDA needs at least 2 speakers, got {}",
            stats.len()
        )));
    }
    if stats.iter().all(|s| s.count < 2) {
        return Err(Error::DegenerateInput(
            "PLDA needs speakers with at least 2 embeddings".into(),
        ));
    }
    let n_total: usize = stats.iter().map(|s| s.count).sum();
    let mut global = DVector::zeros(dim);
    for s in &stats {
        global += &s.mean * s.count as f64;
    }
    global /= n_total as f64;

    // Moment initialization: within = pooled scatter, between = covariance
    // of class means.
    let mut sw = DMatrix::zeros(dim, dim);
    let mut sb = DMatrix::zeros(dim, dim);
    for s in &stats {
        sw += &s.scatter;
        let d = &s.mean - &global;
        sb += &d * d.transpose();
    }
    sw /= n_total as f64;
    sb /= stats.len() as f64;

    let mean: Vec<f64> = global.iter().copied().collect();
    let mut model = PldaModel::from_parts(mean, sb, sw)?;
    let mut lls = Vec::with_capacity(iters + 1);
    lls.push(model.log_likelihood(data)?);
    for it in 0..iters {
        let next = model.em_step(data)?;
        let ll = next.log_likelihood(data)?;
        let prev = *lls.last().expect("non-empty");
        let slack = 1e-7 * prev.abs().max(1.0);
        if ll + slack < prev {
            return Err(Error::Numeric(format!(
                "EM log-likelihood decreased at iteration {}: {prev} → {ll}",
                it + 1
            )));
        }
        lls.push(ll);
        model = next;
    }
    Ok((model, lls))
}

/// Adaptation scales: the fractions of the excess total covariance added to
/// the within- and between-speaker covariances.
#[derive(Debug, Clone, Copy)]
pub struct AdaptationConfig {
    pub within_scale: f64,
    pub between_scale: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig { within_scale: 0.75, between_scale: 0.25 }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("within_scale", self.within_scale), ("between_scale", self.between_scale)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Unsupervised adaptation: recenter on the unlabeled data and distribute
/// the PSD part of the excess total covariance `Σ_t − (Σ_b + Σ_w)` between
/// the two covariances in the configured proportions.
pub fn plda_adapt(
    model: &PldaModel,
    unlabeled: &[Vec<f64>],
    cfg: &AdaptationConfig,
) -> Result<PldaModel> {
    cfg.validate()?;
    let dim = model.dim;
    if unlabeled.len() <= dim {
        return Err(Error::DegenerateInput(format!(
            "adaptation needs more than {dim} vectors (the embedding dimension), got {}",
            unlabeled.len()
        )));
    }
    if unlabeled.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("adaptation vectors have the wrong dimension".into()));
    }
    let n = unlabeled.len() as f64;
    let mut mean = DVector::zeros(dim);
    for v in unlabeled {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut total = DMatrix::zeros(dim, dim);
    for v in unlabeled {
        let d = DVector::from_column_slice(v) - &mean;
        total += &d * d.transpose();
    }
    total /= n;

    let excess = &total - &(model.sigma_b_matrix() + model.sigma_w_matrix());
    let (excess_psd, _) = floor_eigenvalues(&excess, 0.0);
    let sb = model.sigma_b_matrix() + &excess_psd * cfg.between_scale;
    let sw = model.sigma_w_matrix() + &excess_psd * cfg.within_scale;
    PldaModel::from_parts(mean.iter().copied().collect(), sb, sw)
}

// ── Full backend (LDA + length norm + PLDA) ─────────────────────────

/// The complete scoring backend applied to raw embeddings.
pub struct Backend {
    pub lda: LdaModel,
    pub plda: PldaModel,
    pub length_norm: bool,
}

impl Backend {
    /// Train the chain: LDA on labeled embeddings, then PLDA in the
    /// projected (optionally length-normalized) space.
    pub fn train(
        data: &[(Vec<f64>, usize)],
        lda_dim: usize,
        plda_iters: usize,
        length_norm: bool,
    ) -> Result<Backend> {
        let lda = lda_train(data, lda_dim)?;
        let projected: Vec<(Vec<f64>, usize)> = data
            .iter()
            .map(|(v, c)| {
                let p = lda.project(v)?;
                let p = if length_norm { length_normalize(&p)? } else { p };
                Ok((p, *c))
            })
            .collect::<Result<_>>()?;
        let (plda, _) = plda_train(&projected, plda_iters)?;
        Ok(Backend { lda, plda, length_norm })
    }

    /// Map a raw embedding into PLDA space.
    pub fn prepare(&self, v: &[f64]) -> Result<Vec<f64>> {
        let p = self.lda.project(v)?;
        if self.length_norm {
            length_normalize(&p)
        } else {
            Ok(p)
        }
    }

    /// Adapt the PLDA stage on unlabeled raw embeddings.
    pub fn adapt(&self, unlabeled_raw: &[Vec<f64>], cfg: &AdaptationConfig) -> Result<Backend> {
        let prepared: Vec<Vec<f64>> =
            unlabeled_raw.iter().map(|v| self.prepare(v)).collect::<Result<_>>()?;
        Ok(Backend {
            lda: self.lda.clone(),
            plda: plda_adapt(&self.plda, &prepared, cfg)?,
            length_norm: self.length_norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new(BACKEND_MAGIC);
        c.push_text("length_norm", if self.length_norm { "true" } else { "false" });
        c.push_tensor("lda.mean", vec![self.lda.in_dim], self.lda.mean.clone());
        c.push_tensor(
            "lda.projection",
            vec![self.lda.out_dim, self.lda.in_dim],
            self.lda.projection.clone(),
        );
        c.push_tensor("plda.mean", vec![self.plda.dim], self.plda.mean.clone());
        c.push_tensor(
            "plda.sigma_b",
            vec![self.plda.dim, self.plda.dim],
            self.plda.sigma_b.clone(),
        );
        c.push_tensor(
            "plda.sigma_w",
            vec![self.plda.dim, self.plda.dim],
            self.plda.sigma_w.clone(),
        );
        c.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Backend> {
        let c = Container::read_from(path, BACKEND_MAGIC)?;
        let length_norm = match c.get_text("length_norm")? {
            "true" => true,
            "false" => false,
            other => return Err(Error::Config(format!("bad length_norm value {other:?}"))),
        };
        let (mshape, mean) = c.get_tensor("lda.mean")?;
        let (pshape, projection) = c.get_tensor("lda.projection")?;
        if pshape.len() != 2 || mshape.len() != 1 || pshape[1] != mshape[0] {
            return Err(Error::Dimension("inconsistent LDA tensors in backend file".into()));
        }
        let lda = LdaModel {
            mean: mean.to_vec(),
            projection: projection.to_vec(),
            in_dim: pshape[1],
            out_dim: pshape[0],
        };
        let (_, pmean) = c.get_tensor("plda.mean")?;
        let dim = pmean.len();
        let (_, sb) = c.get_tensor("plda.sigma_b")?;
        let (_, sw) = c.get_tensor("plda.sigma_w")?;
        let plda = PldaModel::from_parts(
            pmean.to_vec(),
            DMatrix::from_row_slice(dim, dim, sb),
            DMatrix::from_row_slice(dim, dim, sw),
        )?;
        Ok(Backend { lda, plda, length_norm })
    }
}

// ── Embedding exchange formats ──────────────────────────────────────

use crate::model::Embedding;

/// Text form: one `utterance-id dim v1 v2 … vdim` line per embedding.
pub fn write_embeddings_text(embeddings: &[Embedding], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in embeddings {
        out.push_str(&e.utterance_id);
        out.push_str(&format!(" {}", e.vector.len()));
        for v in &e.vector {
            out.push_str(&format!(" {v}"));
        }
        out.push('\n');
    }
    crate::container::atomic_write(path, out.as_bytes())
}

pub fn read_embeddings_text(path: &Path) -> Result<Vec<Embedding>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().ok_or(Error::Parse { line: i + 1, msg: "empty line".into() })?;
        let dim: usize = parts
            .next()
            .and_then(|d| d.parse().ok())
            .ok_or(Error::Parse { line: i + 1, msg: "missing dimension".into() })?;
        let vector: Vec<f64> = parts
            .map(|v| {
                v.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad value {v:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if vector.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("declared dim {dim} but found {} values", vector.len()),
            });
        }
        out.push(Embedding { utterance_id: id.to_string(), vector });
    }
    Ok(out)
}

/// Binary form: a tensor container with one entry per utterance.
pub fn write_embeddings_binary(embeddings: &[Embedding], path: &Path) -> Result<()> {
    let mut c = Container::new(EMBEDDING_MAGIC);
    for e in embeddings {
        c.push_tensor(e.utterance_id.clone(), vec![e.vector.len()], e.vector.clone());
    }
    c.write_to(path)
}

pub fn read_embeddings_binary(path: &Path) -> Result<Vec<Embedding>> {
    let c = Container::read_from(path, EMBEDDING_MAGIC)?;
    c.entries
        .into_iter()
        .map(|e| match e.payload {
            crate::container::Payload::Tensor { values, .. } => {
                Ok(Embedding { utterance_id: e.name, vector: values })
            }
            _ => Err(Error::Config(format!("embedding entry {:?} is not a tensor", e.name))),
        })
        .collect()
}

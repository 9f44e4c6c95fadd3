//! Self-contained finite-difference validation of every analytic gradient:
//! influence functions, diffusion steps, the chained prior, each data solve
//! and the end-to-end unrolled loss.
//!
//! Central differences on deterministic random instances; each block reports
//! its worst relative error and the coordinate that produced it.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataprox::{
    data_prox_backward, solve_consensus, DataProxInputs, Sensing, TaskSpec,
};
use crate::error::Result;
use crate::image::Image;
use crate::model::{ModelParams, ParamSelection};
use crate::prior::{Architecture, PriorProx, RbfConfig};
use crate::rbf::RbfFunction;
use crate::train::synth::{build_training_samples, synthetic_clean_image, ClassDef, ClassKind};
use crate::train::{loss, loss_grad};

/// Outcome of one gradient block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: String,
}

/// Outcome of the whole suite.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }

    /// One line per block plus a verdict.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let status = if b.max_rel_error < self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "{status:4} {:<20} checked {:>5}  max rel error {:.3e}  worst: {}\n",
                b.name, b.checked, b.max_rel_error, b.worst_coordinate
            ));
        }
        out.push_str(&format!(
            "gradcheck: {} (tolerance {:.1e})\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        ));
        out
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

struct BlockAccum {
    name: &'static str,
    checked: usize,
    max_rel_error: f64,
    worst: String,
}

impl BlockAccum {
    fn new(name: &'static str) -> Self {
        BlockAccum {
            name,
            checked: 0,
            max_rel_error: 0.0,
            worst: "-".into(),
        }
    }

    fn record(&mut self, coordinate: String, analytic: f64, fd: f64) {
        self.checked += 1;
        let rel = rel_err(analytic, fd);
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = format!("{coordinate} (analytic {analytic:.6e}, fd {fd:.6e})");
        }
    }

    fn finish(self) -> BlockReport {
        BlockReport {
            name: self.name,
            checked: self.checked,
            max_rel_error: self.max_rel_error,
            worst_coordinate: self.worst,
        }
    }
}

fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> Image {
    Image::from_fn(w, h, 255.0, |_, _| rng.random_range(0.0..255.0))
}

/// Central difference of `<c, out(theta)>` computed as a pixelwise image
/// difference first; avoids the cancellation a scalar `f(hi) - f(lo)`
/// suffers when the objective value dwarfs the gradient being probed.
fn fd_dot(c: &Image, hi: &Image, lo: &Image, step: f64) -> f64 {
    let mut acc = 0.0;
    for ((cv, hv), lv) in c.data().iter().zip(hi.data()).zip(lo.data()) {
        acc += cv * (hv - lv);
    }
    acc / (2.0 * step)
}

fn randomize_prior(prior: &mut PriorProx, rng: &mut impl Rng) {
    let basis = prior.basis().clone();
    for stage in prior.stages_mut() {
        for lf in stage.filters_mut() {
            let coeffs: Vec<f64> = (0..basis.dim()).map(|_| rng.random_range(-0.4..0.4)).collect();
            lf.set_coeffs(&basis, &coeffs).unwrap();
        }
        for psi in stage.influences_mut() {
            for w in psi.weights_mut() {
                *w = rng.random_range(-0.3..0.3);
            }
        }
    }
}

fn check_rbf(acc: &mut BlockAccum, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..21).map(|_| rng.random_range(-2.0..2.0)).collect();
    let f = RbfFunction::new(150.0, 10.0, weights).unwrap();
    let step = 1e-5 * f.range();
    for i in 0..20 {
        let v = rng.random_range(-140.0..140.0);
        let (d_dv, d_dw) = f.grad(v);
        let fd = (f.eval(v + step) - f.eval(v - step)) / (2.0 * step);
        acc.record(format!("d/dv at v={v:.2} (case {i})"), d_dv, fd);
        // one weight per point
        let j = rng.random_range(0..f.num_kernels());
        let mut hi = f.clone();
        hi.weights_mut()[j] += 1e-4;
        let mut lo = f.clone();
        lo.weights_mut()[j] -= 1e-4;
        let fdw = (hi.eval(v) - lo.eval(v)) / 2e-4;
        acc.record(format!("d/dw[{j}] at v={v:.2}"), d_dw[j], fdw);
    }
}

fn check_prior_block(acc: &mut BlockAccum, stages: usize, seed: u64, corrupt: bool) {
    let arch = Architecture {
        stages,
        filters_per_stage: 2,
        filter_size: 3,
        rbf: RbfConfig {
            kernels: 5,
            range: 120.0,
            bandwidth: 60.0,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prior = PriorProx::init(&arch).unwrap();
    randomize_prior(&mut prior, &mut rng);
    let x = random_image(10, 10, &mut rng);
    let c = random_image(10, 10, &mut rng).map(|v| v / 255.0);

    let (_, tape) = prior.forward(&x).unwrap();
    let (dx, mut grad) = prior.backward(&tape, &c).unwrap();
    if corrupt {
        grad.stages[0].filter_coeffs[0][0] += 0.5;
    }

    let step = 1e-4;
    let basis = prior.basis().clone();
    for k in 0..stages {
        for i in 0..2 {
            for q in 0..basis.dim() {
                let mut hi = prior.clone();
                let mut ch = hi.stages()[k].filters()[i].coeffs().to_vec();
                ch[q] += step;
                hi.stages_mut()[k].filters_mut()[i].set_coeffs(&basis, &ch).unwrap();
                let mut lo = prior.clone();
                let mut cl = lo.stages()[k].filters()[i].coeffs().to_vec();
                cl[q] -= step;
                lo.stages_mut()[k].filters_mut()[i].set_coeffs(&basis, &cl).unwrap();
                let fd = fd_dot(&c, &hi.apply(&x).unwrap(), &lo.apply(&x).unwrap(), step);
                acc.record(
                    format!("stage {k} filter {i} coeff {q}"),
                    grad.stages[k].filter_coeffs[i][q],
                    fd,
                );
            }
            for j in 0..5 {
                let mut hi = prior.clone();
                hi.stages_mut()[k].influences_mut()[i].weights_mut()[j] += step;
                let mut lo = prior.clone();
                lo.stages_mut()[k].influences_mut()[i].weights_mut()[j] -= step;
                let fd = fd_dot(&c, &hi.apply(&x).unwrap(), &lo.apply(&x).unwrap(), step);
                acc.record(
                    format!("stage {k} filter {i} rbf weight {j}"),
                    grad.stages[k].rbf_weights[i][j],
                    fd,
                );
            }
        }
    }
    // directional input derivative
    let dir = random_image(10, 10, &mut rng).map(|v| v / 255.0 - 0.5);
    let mut x_hi = x.clone();
    x_hi.add_scaled(&dir, step);
    let mut x_lo = x.clone();
    x_lo.add_scaled(&dir, -step);
    let fd = fd_dot(&c, &prior.apply(&x_hi).unwrap(), &prior.apply(&x_lo).unwrap(), step);
    acc.record("input direction".into(), dx.dot(&dir), fd);
}

fn check_data_prox(acc: &mut BlockAccum, sensing_kind: &str, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (8, 8);
    let b = random_image(w, h, &mut rng);
    let z = random_image(w, h, &mut rng);
    let upstream = random_image(w, h, &mut rng).map(|v| v / 255.0);
    let sensing = match sensing_kind {
        "identity" => Sensing::Identity,
        "deconv" => {
            let mut taps: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= s);
            Sensing::ConvolutionPsf(crate::filter::Filter::new(3, taps)?)
        }
        "mask" => {
            let data: Vec<u8> = (0..w * h).map(|_| rng.random_bool(0.5) as u8).collect();
            Sensing::BinaryMask(crate::dataprox::Mask::new(w, h, data)?)
        }
        "dense" => Sensing::DenseMatrix({
            // random well-conditioned square operator
            let n = 16;
            let data: Vec<f64> = (0..n * n)
                .map(|i| {
                    let diag = (i / n) == (i % n);
                    rng.random_range(-0.3..0.3) + if diag { 1.0 } else { 0.0 }
                })
                .collect();
            crate::dataprox::DenseSensing::new(n, n, data)?
        }),
        other => panic!("unknown sensing kind {other}"),
    };
    // dense uses a 4x4 raster to match the 16x16 matrix
    let (b, z, upstream) = if sensing_kind == "dense" {
        (
            random_image(4, 4, &mut rng),
            random_image(4, 4, &mut rng),
            random_image(4, 4, &mut rng).map(|v| v / 255.0),
        )
    } else {
        (b, z, upstream)
    };
    let task = TaskSpec {
        sensing: sensing.clone(),
        noise_sigma: 5.0,
        class_id: "chk".into(),
    };
    let lambda = rng.random_range(0.2..3.0);
    let rho = rng.random_range(0.2..3.0);
    let inputs = DataProxInputs::new(&b, &z, lambda, rho)?;
    let (dz, dlambda) = data_prox_backward(&inputs, &upstream, &task)?;

    let solve = |zz: &Image, lam: f64| -> Result<Image> {
        solve_consensus(&sensing, &b, lam, &[(rho, zz)])
    };
    // lambda derivative
    let hl = 1e-5 * lambda;
    let fd_lambda = fd_dot(&upstream, &solve(&z, lambda + hl)?, &solve(&z, lambda - hl)?, hl);
    acc.record(format!("{sensing_kind}: d/dlambda"), dlambda, fd_lambda);
    // three random slack directions
    for case in 0..3 {
        let dir = random_image(z.width(), z.height(), &mut rng).map(|v| v / 255.0 - 0.5);
        let step = 1e-4;
        let mut z_hi = z.clone();
        z_hi.add_scaled(&dir, step);
        let mut z_lo = z.clone();
        z_lo.add_scaled(&dir, -step);
        let fd = fd_dot(&upstream, &solve(&z_hi, lambda)?, &solve(&z_lo, lambda)?, step);
        acc.record(
            format!("{sensing_kind}: slack direction {case}"),
            dz.dot(&dir),
            fd,
        );
    }
    Ok(())
}

fn check_loss(acc: &mut BlockAccum, seed: u64) -> Result<()> {
    let clean = vec![
        synthetic_clean_image(36, 36, seed),
        synthetic_clean_image(36, 36, seed + 1),
    ];
    let classes = vec![ClassDef {
        id: "sigma15".into(),
        kind: ClassKind::Denoise { sigma: 15.0 },
        count: 2,
    }];
    let samples = build_training_samples(&clean, 12, &classes, seed)?;
    let arch = Architecture {
        stages: 1,
        filters_per_stage: 2,
        filter_size: 3,
        rbf: RbfConfig {
            kernels: 5,
            range: 120.0,
            bandwidth: 60.0,
        },
    };
    let mut model = ModelParams::init(&arch)?;
    model.set_lambda("sigma15", 1.0 / 225.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    randomize_prior(&mut model.prior, &mut rng);

    let sel = ParamSelection::all(&model);
    let (_, grad) = loss_grad(&model, &samples, 2)?;
    let gvec = model.extract_grad(&grad, &sel);
    let x0 = model.extract(&sel);
    for q in 0..x0.len() {
        let step = 1e-4 * x0[q].abs().max(1.0);
        let mut hi = model.clone();
        let mut xp = x0.clone();
        xp[q] += step;
        hi.inject(&sel, &xp)?;
        let mut lo = model.clone();
        let mut xm = x0.clone();
        xm[q] -= step;
        lo.inject(&sel, &xm)?;
        let fd = (loss(&hi, &samples, 2)? - loss(&lo, &samples, 2)?) / (2.0 * step);
        acc.record(format!("loss param {q}"), gvec[q], fd);
    }
    Ok(())
}

/// Runs every block; `corrupt_block`, when set, deliberately perturbs one
/// analytic coordinate of that block so the negative path is testable.
pub fn run_suite(seed: u64, tolerance: f64, corrupt_block: Option<&str>) -> Result<GradCheckReport> {
    let mut blocks = Vec::new();

    let mut acc = BlockAccum::new("rbf");
    check_rbf(&mut acc, seed);
    if corrupt_block == Some("rbf") {
        acc.max_rel_error = 1.0;
        acc.worst = "deliberately corrupted (test hook)".into();
    }
    blocks.push(acc.finish());

    let mut acc = BlockAccum::new("diffusion_step");
    check_prior_block(&mut acc, 1, seed + 10, corrupt_block == Some("diffusion_step"));
    blocks.push(acc.finish());

    let mut acc = BlockAccum::new("prior_prox_k2");
    check_prior_block(&mut acc, 2, seed + 20, corrupt_block == Some("prior_prox_k2"));
    blocks.push(acc.finish());

    for kind in ["identity", "deconv", "mask", "dense"] {
        let name: &'static str = match kind {
            "identity" => "data_prox_identity",
            "deconv" => "data_prox_deconv",
            "mask" => "data_prox_mask",
            _ => "data_prox_dense",
        };
        let mut acc = BlockAccum::new(name);
        check_data_prox(&mut acc, kind, seed + 30)?;
        if corrupt_block == Some(name) {
            acc.max_rel_error = 1.0;
            acc.worst = "deliberately corrupted (test hook)".into();
        }
        blocks.push(acc.finish());
    }

    let mut acc = BlockAccum::new("loss_t2");
    check_loss(&mut acc, seed + 40)?;
    if corrupt_block == Some("loss_t2") {
        acc.max_rel_error = 1.0;
        acc.worst = "deliberately corrupted (test hook)".into();
    }
    blocks.push(acc.finish());

    Ok(GradCheckReport { tolerance, blocks })
}

/// Default full suite at the standard tolerance.
pub fn run_full_suite(seed: u64) -> Result<GradCheckReport> {
    run_suite(seed, 1e-4, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_full_suite(0).unwrap();
        assert!(report.passed(), "\n{}", report.render());
    }

    #[test]
    fn corrupted_block_fails_and_names_coordinate() {
        let report = run_suite(0, 1e-4, Some("prior_prox_k2")).unwrap();
        assert!(!report.passed());
        let bad = report
            .blocks
            .iter()
            .find(|b| b.name == "prior_prox_k2")
            .unwrap();
        assert!(bad.max_rel_error >= 1e-4);
        assert!(bad.worst_coordinate.contains("stage 0 filter 0 coeff 0")
            || bad.worst_coordinate.contains("corrupted"));
        // other blocks still pass
        assert!(report
            .blocks
            .iter()
            .filter(|b| b.name != "prior_prox_k2")
            .all(|b| b.max_rel_error < 1e-4));
    }

    #[test]
    fn single_parameter_model_block_runs() {
        // smallest architecture: K=1, N=1, f=3, M=2
        let arch = Architecture {
            stages: 1,
            filters_per_stage: 1,
            filter_size: 3,
            rbf: RbfConfig {
                kernels: 2,
                range: 50.0,
                bandwidth: 25.0,
            },
        };
        let mut prior = PriorProx::init(&arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        randomize_prior(&mut prior, &mut rng);
        let x = random_image(8, 8, &mut rng);
        let c = random_image(8, 8, &mut rng).map(|v| v / 255.0);
        let (_, tape) = prior.forward(&x).unwrap();
        let (_, grad) = prior.backward(&tape, &c).unwrap();
        let step = 1e-4;
        let mut hi = prior.clone();
        hi.stages_mut()[0].influences_mut()[0].weights_mut()[0] += step;
        let mut lo = prior.clone();
        lo.stages_mut()[0].influences_mut()[0].weights_mut()[0] -= step;
        let fd = (hi.apply(&x).unwrap().dot(&c) - lo.apply(&x).unwrap().dot(&c)) / (2.0 * step);
        assert!(rel_err(grad.stages[0].rbf_weights[0][0], fd) < 1e-5);
    }
}

use crate::appearance::Photometric;
use crate::error::{Error, Result};
use crate::model::GaussianCloud;
use crate::optim::{fit, FitTrace, LearningRates, Objective, Trainable};
use crate::render::View;

use super::{materialize_into, AssignmentVector, Codebook};

#[derive(Clone)]
struct VqState<'a> {
    cloud: GaussianCloud,
    codebook: Codebook,
    assignments: &'a AssignmentVector,
}

impl Trainable for VqState<'_> {
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.cloud.sh_dc,
            &mut self.cloud.sh_rest,
            &mut self.cloud.raw_opacity,
            &mut self.codebook.vectors,
        ]
    }

    fn after_step(&mut self) {
        materialize_into(&mut self.cloud, &self.codebook, self.assignments).expect("assignments validated up front");
    }
}

struct VqObjective<'a> {
    inner: Photometric<'a>,
}

impl<'a, 'b> Objective<VqState<'b>> for VqObjective<'a> {
    fn view_count(&self) -> usize {
        self.inner.views.len()
    }

    fn loss(&self, state: &VqState<'b>, view: usize) -> Result<f64> {
        self.inner.loss(&state.cloud, view)
    }

    fn loss_and_grad(&self, state: &VqState<'b>, view: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, mut g) = self.inner.loss_grad_for(&state.cloud, view)?;
        let dim = state.codebook.dim;
        let mut code_grad = vec![0.0; state.codebook.vectors.len()];
        for (i, c) in state.assignments.codes.iter().enumerate() {
            if let Some(c) = c {
                let c = *c as usize;
                let row = &mut g.sh_rest[i * dim..(i + 1) * dim];
                for (acc, r) in code_grad[c * dim..(c + 1) * dim].iter_mut().zip(row.iter_mut()) {
                    *acc += *r;
                    *r = 0.0;
                }
            }
        }
        Ok((loss, vec![g.sh_dc, g.sh_rest, g.raw_opacity, code_grad]))
    }
}

/// Fine-tunes appearance with frozen code assignments.
///
/// Members read their SH-rest through their code, so a code's gradient is
/// the sum over every member sharing it. Non-member SH-rest, all dc terms
/// and all opacities are optimized directly. Returns the cloud with member
/// rows materialized from the tuned codebook.
pub fn vq_finetune(
    cloud: &GaussianCloud,
    codebook: &Codebook,
    assignments: &AssignmentVector,
    views: &[View],
    iterations: usize,
) -> Result<(GaussianCloud, Codebook, FitTrace)> {
    vq_finetune_with_rates(cloud, codebook, assignments, views, iterations, LearningRates::FINETUNE)
}

pub fn vq_finetune_with_rates(
    cloud: &GaussianCloud,
    codebook: &Codebook,
    assignments: &AssignmentVector,
    views: &[View],
    iterations: usize,
    rates: LearningRates,
) -> Result<(GaussianCloud, Codebook, FitTrace)> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    codebook.validate()?;
    assignments.validate(cloud.len(), codebook.k())?;
    if iterations == 0 {
        return Ok((cloud.clone(), codebook.clone(), FitTrace::default()));
    }
    let mut state = VqState {
        cloud: cloud.clone(),
        codebook: codebook.clone(),
        assignments,
    };
    state.after_step();
    let objective = VqObjective {
        inner: Photometric { views },
    };
    let trace = fit(
        &objective,
        &mut state,
        &[rates.sh_dc, rates.sh_rest, rates.raw_opacity, rates.sh_rest],
        iterations,
    )?;
    Ok((state.cloud, state.codebook, trace))
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::image::Image;
    use crate::model::{Camera, Gaussian};

    fn setup() -> (GaussianCloud, Vec<View>) {
        let mut cloud = GaussianCloud::empty(1).unwrap();
        for (i, x) in [-0.3, 0.0, 0.3].into_iter().enumerate() {
            cloud
                .push(&Gaussian {
                    position: [x, 0.0, 0.0],
                    sh_dc: [0.2, -0.1, 0.3],
                    sh_rest: (0..9).map(|k| 0.01 * (k + i) as f64).collect(),
                    raw_opacity: 0.5,
                    raw_scale: [-2.0; 3],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                })
                .unwrap();
        }
        let cam = Camera::look_at(Vector3::new(0.0, -3.0, 0.5), Vector3::zeros(), Vector3::z(), 40.0, 24, 24).unwrap();
        let mut target = Image::new(24, 24);
        target.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64 / 7.0);
        (cloud, vec![View { camera: cam, target }])
    }

    #[test]
    fn code_gradient_is_sum_of_member_gradients() {
        let (cloud, views) = setup();
        let cb = Codebook::new(cloud.rest(1).to_vec(), 9, 0.8);
        let assignments = AssignmentVector::from_membership(&[true, false, true], &[0, 0]).unwrap();
        let mut state = VqState {
            cloud,
            codebook: cb,
            assignments: &assignments,
        };
        state.after_step();
        let photometric = Photometric { views: &views };
        let (_, direct) = photometric.loss_grad_for(&state.cloud, 0).unwrap();
        let (_, grads) = VqObjective { inner: Photometric { views: &views } }.loss_and_grad(&state, 0).unwrap();
        for d in 0..9 {
            assert_eq!(grads[3][d], direct.sh_rest[d] + direct.sh_rest[18 + d]);
            assert_eq!(grads[1][d], 0.0);
            assert_eq!(grads[1][18 + d], 0.0);
            assert_eq!(grads[1][9 + d], direct.sh_rest[9 + d]);
        }
        assert_eq!(grads[0], direct.sh_dc);
    }

    #[test]
    fn first_step_moves_code_by_adam_step_of_summed_gradient() {
        let (cloud, views) = setup();
        let cb = Codebook::new(cloud.rest(0).to_vec(), 9, 0.8);
        let assignments = AssignmentVector::from_membership(&[true, true, true], &[0, 0, 0]).unwrap();
        let materialized = crate::vq::materialize(&cloud, &cb, &assignments).unwrap();
        let (_, g) = Photometric { views: &views }.loss_grad_for(&materialized, 0).unwrap();
        let summed: Vec<f64> = (0..9).map(|d| (0..3).map(|i| g.sh_rest[i * 9 + d]).sum()).collect();
        let lr = 1e-4;
        let rates = LearningRates {
            sh_dc: 0.0,
            sh_rest: lr,
            raw_opacity: 0.0,
        };
        let (_, moved, trace) = vq_finetune_with_rates(&cloud, &cb, &assignments, &views, 1, rates).unwrap();
        assert_eq!(trace.backoffs, 0);
        for d in 0..9 {
            let expected = cb.vectors[d] - lr * summed[d] / (summed[d].abs() + 1e-8);
            assert!((moved.vectors[d] - expected).abs() < 1e-15, "{d}");
        }
    }
}

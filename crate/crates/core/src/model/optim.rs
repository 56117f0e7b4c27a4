use super::{Dense, MilLayers};

/// RMSProp with classical momentum.
///
/// ```text
/// ms  = decay * ms + (1 - decay) * g^2
/// mom = momentum * mom + lr * g / sqrt(ms + eps)
/// w  -= mom
/// ```
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
    mean_square: MilLayers,
    velocity: MilLayers,
}

impl RmsProp {
    pub fn new(shape_of: &MilLayers, learning_rate: f64, decay: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            decay,
            momentum,
            epsilon: 1e-7,
            mean_square: shape_of.zeros_like(),
            velocity: shape_of.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut MilLayers, grads: &MilLayers) {
        let hyper = (self.learning_rate, self.decay, self.momentum, self.epsilon);
        let triples = params
            .layers_mut()
            .into_iter()
            .zip(grads.layers())
            .zip(self.mean_square.layers_mut().into_iter().zip(self.velocity.layers_mut()));
        for ((p, g), (ms, v)) in triples {
            update_dense(p, g, ms, v, hyper);
        }
    }
}

fn update_dense(p: &mut Dense, g: &Dense, ms: &mut Dense, v: &mut Dense, hyper: (f64, f64, f64, f64)) {
    update_slice(
        p.weight.as_slice_mut().expect("standard layout"),
        g.weight.as_slice().expect("standard layout"),
        ms.weight.as_slice_mut().expect("standard layout"),
        v.weight.as_slice_mut().expect("standard layout"),
        hyper,
    );
    update_slice(
        p.bias.as_slice_mut().expect("standard layout"),
        g.bias.as_slice().expect("standard layout"),
        ms.bias.as_slice_mut().expect("standard layout"),
        v.bias.as_slice_mut().expect("standard layout"),
        hyper,
    );
}

fn update_slice(p: &mut [f64], g: &[f64], ms: &mut [f64], v: &mut [f64], hyper: (f64, f64, f64, f64)) {
    let (lr, decay, momentum, eps) = hyper;
    for i in 0..p.len() {
        let gi = g[i];
        ms[i] = decay * ms[i] + (1.0 - decay) * gi * gi;
        v[i] = momentum * v[i] + lr * gi / (ms[i] + eps).sqrt();
        p[i] -= v[i];
    }
}

use super::tape::Grad;
use super::tensor::Tensor;

/// Plain gradient descent. Row-sparse gradients touch only their rows.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd { lr }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Grad>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        for (p, g) in params.iter_mut().zip(grads) {
            match g {
                None => {}
                Some(Grad::Dense(g)) => {
                    for (x, d) in p.data.iter_mut().zip(g) {
                        *x -= self.lr * d;
                    }
                }
                Some(Grad::Rows(rows)) => {
                    let c = p.cols;
                    for (&r, gr) in rows {
                        for (x, d) in p.data[r * c..(r + 1) * c].iter_mut().zip(gr) {
                            *x -= self.lr * d;
                        }
                    }
                }
            }
        }
    }
}

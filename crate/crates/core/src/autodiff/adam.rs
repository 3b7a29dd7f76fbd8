use super::tape::Grad;
use super::tensor::Tensor;

/// Adam with bias correction. Row-sparse gradients update only the rows
/// they touch (moments of untouched rows are left as they are).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `grads[i]` belongs to `params[i]`; `None` means no gradient.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Grad>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            match g {
                None => {}
                Some(Grad::Dense(g)) => {
                    for i in 0..p.data.len() {
                        update(&mut p.data[i], &mut m[i], &mut v[i], g[i]);
                    }
                }
                Some(Grad::Rows(rows)) => {
                    let c = p.cols;
                    for (&r, gr) in rows {
                        for j in 0..c {
                            let i = r * c + j;
                            update(&mut p.data[i], &mut m[i], &mut v[i], gr[j]);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = vec![Tensor::from_vec(1, 3, vec![1.0, -2.0, 3.0]).unwrap()];
        let before = p.clone();
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &[Some(Grad::Dense(vec![0.0; 3]))]);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap()];
        let mut adam = Adam::new(0.01);
        let g = [0.5, -3.0];
        adam.step(&mut p, &[Some(Grad::Dense(g.to_vec()))]);
        for (x, gi) in p[0].data.iter().zip(g) {
            // m_hat = g, v_hat = g^2
            let want = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((x - want).abs() < 1e-15);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let w = p[0].data[0];
            adam.step(&mut p, &[Some(Grad::Dense(vec![2.0 * (w - 3.0)]))]);
        }
        assert!((p[0].data[0] - 3.0).abs() < 0.05, "{}", p[0].data[0]);
    }

    #[test]
    fn sparse_rows_touch_only_their_rows() {
        let mut p = vec![Tensor::zeros(3, 2)];
        let mut rows = std::collections::BTreeMap::new();
        rows.insert(1, vec![1.0, 1.0]);
        Adam::new(0.1).step(&mut p, &[Some(Grad::Rows(rows))]);
        assert_eq!(p[0].row(0), &[0.0, 0.0]);
        assert!(p[0].row(1).iter().all(|&x| x < 0.0));
        assert_eq!(p[0].row(2), &[0.0, 0.0]);
    }
}

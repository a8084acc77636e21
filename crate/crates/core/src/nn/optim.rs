use crate::scalar::Scalar;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v <- mu v + g`, `theta <- theta - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: Vec<&mut Vec<T>>) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        }
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = mu * *vi + *gi;
                *pi -= lr * *vi;
            }
        }
    }
}

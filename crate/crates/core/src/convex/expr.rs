//! Small closed set of smooth scalar terms with exact first and second
//! derivatives, enough to express every subproblem in this crate.

use nalgebra::{DMatrix, DVector};

/// One smooth scalar term of a [`Composite`].
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// `coef * x[i]`
    Linear { i: usize, coef: f64 },
    /// `coef * x[i]^2`
    Square { i: usize, coef: f64 },
    /// `coef * x[i]^3`; convex on `x >= 0` for positive `coef`.
    Cube { i: usize, coef: f64 },
    /// `coef * t * ln(1 + a*y/t)` with `t = x[t]`, `y = x[y]`; the perspective
    /// of `ln(1 + a y)`, concave on `t > 0, y >= 0`.
    PerspectiveLog { t: usize, y: usize, a: f64, coef: f64 },
    /// `coef * exp(x[i1] + ... )` over the listed indices.
    Exp { idx: Vec<usize>, coef: f64 },
    /// `coef * ln(softplus(u))` where
    /// `u = ln(gain) + x[own] - ln(noise + sum_j g_j exp(x[j]))`.
    /// `ln ln(1 + sinr)` in log-power coordinates; concave in `x`.
    LogRate { own: usize, gain: f64, interferers: Vec<(usize, f64)>, noise: f64, coef: f64 },
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Term {
    fn sinr_exponent(own: usize, gain: f64, interferers: &[(usize, f64)], noise: f64, x: &DVector<f64>) -> (f64, f64, Vec<f64>) {
        // returns u, the interference-plus-noise S and the weights g_j e^{x_j} / S
        let terms: Vec<f64> = interferers.iter().map(|&(j, g)| g * x[j].exp()).collect();
        let s = noise + terms.iter().sum::<f64>();
        let u = gain.ln() + x[own] - s.ln();
        (u, s, terms.into_iter().map(|t| t / s).collect())
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Term::Linear { i, coef } => coef * x[*i],
            Term::Square { i, coef } => coef * x[*i] * x[*i],
            Term::Cube { i, coef } => coef * x[*i].powi(3),
            Term::PerspectiveLog { t, y, a, coef } => {
                let (tv, yv) = (x[*t], x[*y]);
                if tv <= 0.0 {
                    // continuous extension at t = 0 for bounded y/t
                    return if yv == 0.0 && tv == 0.0 { 0.0 } else { f64::NAN };
                }
                coef * tv * (a * yv / tv).ln_1p()
            }
            Term::Exp { idx, coef } => coef * idx.iter().map(|&i| x[i]).sum::<f64>().exp(),
            Term::LogRate { own, gain, interferers, noise, coef } => {
                let (u, _, _) = Self::sinr_exponent(*own, *gain, interferers, *noise, x);
                coef * softplus(u).ln()
            }
        }
    }

    fn add_derivatives(&self, x: &DVector<f64>, w: f64, g: &mut DVector<f64>, h: Option<&mut DMatrix<f64>>) {
        match self {
            Term::Linear { i, coef } => g[*i] += w * coef,
            Term::Square { i, coef } => {
                g[*i] += w * 2.0 * coef * x[*i];
                if let Some(h) = h {
                    h[(*i, *i)] += w * 2.0 * coef;
                }
            }
            Term::Cube { i, coef } => {
                g[*i] += w * 3.0 * coef * x[*i] * x[*i];
                if let Some(h) = h {
                    h[(*i, *i)] += w * 6.0 * coef * x[*i];
                }
            }
            Term::PerspectiveLog { t, y, a, coef } => {
                let (tv, yv) = (x[*t], x[*y]);
                let s = tv + a * yv;
                let c = w * coef;
                g[*t] += c * ((a * yv / tv).ln_1p() - a * yv / s);
                g[*y] += c * a * tv / s;
                if let Some(h) = h {
                    let k = a * a / (s * s);
                    h[(*t, *t)] -= c * k * yv * yv / tv;
                    h[(*t, *y)] += c * k * yv;
                    h[(*y, *t)] += c * k * yv;
                    h[(*y, *y)] -= c * k * tv;
                }
            }
            Term::Exp { idx, coef } => {
                let v = w * coef * idx.iter().map(|&i| x[i]).sum::<f64>().exp();
                for &i in idx {
                    g[i] += v;
                }
                if let Some(h) = h {
                    for &i in idx {
                        for &j in idx {
                            h[(i, j)] += v;
                        }
                    }
                }
            }
            Term::LogRate { own, gain, interferers, noise, coef } => {
                let (u, _, weights) = Self::sinr_exponent(*own, *gain, interferers, *noise, x);
                let sp = softplus(u);
                let sg = sigmoid(u);
                let d1 = sg / sp;
                let d2 = ((sg * (1.0 - sg) * sp - sg * sg) / (sp * sp)).min(0.0);
                let c = w * coef;
                // grad u = e_own - weights
                let mut du: Vec<(usize, f64)> = vec![(*own, 1.0)];
                du.extend(interferers.iter().zip(&weights).map(|(&(j, _), &wt)| (j, -wt)));
                for &(i, v) in &du {
                    g[i] += c * d1 * v;
                }
                if let Some(h) = h {
                    for &(i, vi) in &du {
                        for &(j, vj) in &du {
                            h[(i, j)] += c * d2 * vi * vj;
                        }
                    }
                    // hess u = -(diag(w) - w w^T)
                    for (a, &(i, _)) in interferers.iter().enumerate() {
                        h[(i, i)] -= c * d1 * weights[a];
                        for (b, &(j, _)) in interferers.iter().enumerate() {
                            h[(i, j)] += c * d1 * weights[a] * weights[b];
                        }
                    }
                }
            }
        }
    }
}

/// `constant + sum(terms)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Composite {
    pub constant: f64,
    pub terms: Vec<Term>,
}

impl Composite {
    pub fn new(constant: f64) -> Self {
        Self { constant, terms: Vec::new() }
    }

    pub fn with(mut self, term: Term) -> Self {
        self.terms.push(term);
        self
    }

    pub fn push(&mut self, term: Term) {
        self.terms.push(term);
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.constant + self.terms.iter().map(|t| t.value(x)).sum::<f64>()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for t in &self.terms {
            t.add_derivatives(x, 1.0, &mut g, None);
        }
        g
    }

    /// Adds `w * grad` and `w * hess` into the accumulators.
    pub fn accumulate(&self, x: &DVector<f64>, w: f64, g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
        for t in &self.terms {
            t.add_derivatives(x, w, g, Some(h));
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        self.accumulate(x, 1.0, &mut g, &mut h);
        h
    }
}

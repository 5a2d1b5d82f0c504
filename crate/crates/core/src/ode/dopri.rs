//! Dormand-Prince 5(4) step with its fourth-order continuous extension.
//! The systems solved here are autonomous, so the stage times are not needed.

const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Work arrays for one system dimension.
pub(crate) struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    pub y_new: Vec<f64>,
    pub err: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
        }
    }

    /// Derivative at the start of the step (first stage).
    pub fn k1(&self) -> &[f64] {
        &self.k[0]
    }

    pub fn k1_mut(&mut self) -> &mut Vec<f64> {
        &mut self.k[0]
    }

    /// Reuses the last stage as the first stage of the next step.
    pub fn fsal(&mut self) {
        self.k.swap(0, 6);
    }

    /// Attempts a step of size `h` from `y`; `k1` must hold `f(y)`. Leaves the
    /// proposed solution in `y_new`, the embedded error estimate in `err`
    /// and `f(y_new)` in the seventh stage.
    pub fn attempt(&mut self, y: &[f64], h: f64, f: &mut impl FnMut(&[f64], &mut [f64])) {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(tmp, k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(tmp, k6);
        for i in 0..n {
            self.y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(&self.y_new, k7);
        for i in 0..n {
            self.err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
    }

    /// Max-norm of the error scaled by `atol + rtol * max(|y|, |y_new|)`.
    pub fn error_norm(&self, y: &[f64], atol: f64, rtol: f64) -> f64 {
        let mut e: f64 = 0.0;
        for ((yi, yn), err) in y.iter().zip(&self.y_new).zip(&self.err) {
            let sk = atol + rtol * yi.abs().max(yn.abs());
            e = e.max(err.abs() / sk);
        }
        e
    }

    /// Coefficients of the continuous extension over the last step.
    pub fn dense(&self, y: &[f64], h: f64) -> [Vec<f64>; 5] {
        let n = y.len();
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let ydiff = self.y_new[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            r[0][i] = y[i];
            r[1][i] = ydiff;
            r[2][i] = bspl;
            r[3][i] = ydiff - h * k7[i] - bspl;
            r[4][i] = h
                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        r
    }
}

/// Evaluates the continuous extension at fraction `theta` of the step.
#[inline]
pub(crate) fn interpolate(r: [f64; 5], theta: f64) -> f64 {
    let s1 = 1.0 - theta;
    r[0] + theta * (r[1] + s1 * (r[2] + theta * (r[3] + s1 * r[4])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_to_tolerance() {
        // y' = -y, y(0) = 1, fixed steps of 0.1
        let mut ws = Workspace::new(1);
        let mut f = |y: &[f64], out: &mut [f64]| out[0] = -y[0];
        let mut y = vec![1.0];
        ws.k1_mut()[0] = -1.0;
        let mut t = 0.0;
        let h = 0.1;
        for _ in 0..10 {
            ws.attempt(&y, h, &mut f);
            let r = ws.dense(&y, h);
            let mid = interpolate([r[0][0], r[1][0], r[2][0], r[3][0], r[4][0]], 0.5);
            assert!((mid - (-(t + 0.05f64)).exp()).abs() < 1e-8);
            y.copy_from_slice(&ws.y_new);
            ws.fsal();
            t += h;
        }
        // stability polynomial of the method: the Taylor polynomial of
        // degree 5 plus z^6 / 600
        let z: f64 = -h;
        let r = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0 + z.powi(5) / 120.0
            + z.powi(6) / 600.0;
        assert!((y[0] - r.powi(10)).abs() < 1e-15);
        assert!((y[0] - (-1.0f64).exp()).abs() < 2e-9);
    }

    #[test]
    fn quartic_is_integrated_exactly() {
        // y' = 5 t^4 written autonomously as (t, y)
        let mut ws = Workspace::new(2);
        let mut f = |y: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
            out[1] = 5.0 * y[0].powi(4);
        };
        let y = vec![0.0, 0.0];
        f(&y, ws.k1_mut());
        ws.attempt(&y, 1.0, &mut f);
        assert!((ws.y_new[1] - 1.0).abs() < 1e-14);
    }
}

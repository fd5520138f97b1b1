/// Anything that owns named `f64` tensors in a fixed visiting order.
///
/// The same type doubles as its own gradient container, so `for_each` and
/// `for_each_mut` must visit tensors in the same order.
pub trait Parameters {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64]));
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));
}

pub fn num_params<P: Parameters + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.for_each("", &mut |_, _, d| n += d.len());
    n
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.for_each("", &mut |_, _, d| out.extend_from_slice(d));
    out
}

/// Writes `flat` back into `p`. Panics if the length is wrong.
pub fn unflatten<P: Parameters + ?Sized>(p: &mut P, flat: &[f64]) {
    let mut off = 0;
    p.for_each_mut(&mut |d| {
        d.copy_from_slice(&flat[off..off + d.len()]);
        off += d.len();
    });
    assert_eq!(
        off,
        flat.len(),
        "flat parameter vector has the wrong length"
    );
}

pub fn zeros_like<P: Parameters + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.for_each_mut(&mut |d| d.fill(0.0));
    z
}

pub fn scale_in_place<P: Parameters + ?Sized>(p: &mut P, s: f64) {
    p.for_each_mut(&mut |d| d.iter_mut().for_each(|x| *x *= s));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

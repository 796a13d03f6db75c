//! Connected-component labeling on grid masks.

use crate::grid::GridSpec;

/// Components of `mask` (row-major over `spec`) where two elements are linked
/// when their Chebyshev distance is at most `link`. `link = 1` is plain
/// 8-connectivity.
///
/// Components are returned in order of their smallest element index, each as an
/// ascending list of indices.
pub fn label(spec: &GridSpec, mask: &[bool], link: usize) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), spec.len(), "mask does not match grid");
    let link = link.max(1) as isize;
    let (rows, cols) = (spec.rows as isize, spec.cols as isize);
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (r, c) = ((i / spec.cols) as isize, (i % spec.cols) as isize);
            for rr in (r - link).max(0)..=(r + link).min(rows - 1) {
                for cc in (c - link).max(0)..=(c + link).min(cols - 1) {
                    let j = (rr * cols + cc) as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

//! Character-level 1-D convolution with max-over-time pooling.
//!
//! Trailing id-0 entries are stripped; a word of `n` characters is then
//! zero-padded on the right to `max(n, width)` positions, so every word
//! (including the empty one) has at least one window. Character id 0 is padding and contributes a zero embedding.

use crate::error::{shape_err, NdError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) struct CharConvCache {
    words: Vec<Vec<usize>>,
    width: usize,
    /// Winning window start per (word, filter).
    argmax: Vec<usize>,
}

pub(crate) fn forward<T: Scalar>(
    table: &Tensor<T>,
    words: &[Vec<usize>],
    w: &Tensor<T>,
    b: &Tensor<T>,
    width: usize,
) -> Result<(Tensor<T>, CharConvCache)> {
    let (chars, dc) = table.dims2();
    let (wr, filters) = w.dims2();
    if table.rank() != 2 || w.rank() != 2 || width == 0 || wr != width * dc || b.len() != filters {
        return Err(shape_err(
            "char_conv",
            format!("table {:?} w {:?} b {:?} width {width}", table.shape(), w.shape(), b.shape()),
        ));
    }
    for word in words {
        if let Some(&bad) = word.iter().find(|&&c| c >= chars) {
            return Err(NdError::OutOfRange {
                what: "character table",
                index: bad,
                size: chars,
            });
        }
    }
    // Trailing padding ids are not part of the word.
    let words: Vec<Vec<usize>> = words
        .iter()
        .map(|w| w[..w.iter().rposition(|&c| c != 0).map_or(0, |p| p + 1)].to_vec())
        .collect();
    let mut out = vec![T::zero(); words.len() * filters];
    let mut argmax = vec![0usize; words.len() * filters];
    let mut window = vec![T::zero(); width * dc];
    let mut resp = vec![T::zero(); filters];
    for (wi, word) in words.iter().enumerate() {
        let windows = word.len().max(width) - width + 1;
        let best = &mut out[wi * filters..(wi + 1) * filters];
        for s in 0..windows {
            for p in 0..width {
                let slot = &mut window[p * dc..(p + 1) * dc];
                match word.get(s + p) {
                    Some(&c) if c != 0 => slot.copy_from_slice(table.row(c)),
                    _ => slot.iter_mut().for_each(|v| *v = T::zero()),
                }
            }
            resp.copy_from_slice(b.data());
            crate::kernels::matmul(&window, w.data(), 1, width * dc, filters, &mut resp);
            for f in 0..filters {
                if s == 0 || resp[f] > best[f] {
                    best[f] = resp[f];
                    argmax[wi * filters + f] = s;
                }
            }
        }
    }
    let out = Tensor::new(vec![words.len(), filters], out)?;
    let cache = CharConvCache {
        words,
        width,
        argmax,
    };
    Ok((out, cache))
}

pub(crate) fn backward<T: Scalar>(
    table: &Tensor<T>,
    w: &Tensor<T>,
    cache: &CharConvCache,
    g: &[T],
    dtable: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let dc = table.dims2().1;
    let filters = w.dims2().1;
    let wd = w.data();
    for (wi, word) in cache.words.iter().enumerate() {
        for f in 0..filters {
            let gv = g[wi * filters + f];
            if gv == T::zero() {
                continue;
            }
            db[f] += gv;
            let s = cache.argmax[wi * filters + f];
            for p in 0..cache.width {
                let c = match word.get(s + p) {
                    Some(&c) if c != 0 => c,
                    _ => continue,
                };
                let emb = table.row(c);
                for e in 0..dc {
                    let row = p * dc + e;
                    dw[row * filters + f] += gv * emb[e];
                    dtable[c * dc + e] += gv * wd[row * filters + f];
                }
            }
        }
    }
}

use crate::error::{Error, Result};
use crate::transform::{dct2, idct2, Block, N};

/// Mid-frequency DCT coefficients carrying bits, in slot order within a block.
pub(crate) const SLOTS: [(usize, usize); 8] = [(4, 3), (3, 4), (5, 2), (2, 5), (4, 4), (5, 3), (3, 5), (6, 2)];

/// One-level Haar DWT, 8×8 DCT-II on the LL band, QIM on mid-frequency
/// coefficients. Bits are assigned to `(block, slot)` positions round-robin
/// and recovered by majority vote.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwtDct {
    pub bits: usize,
    pub delta: f64,
    pub seed: u64,
}

pub const DEFAULT_DELTA: f64 = 24.0 / 255.0;

/// Block grid of the LL band of an `h × w` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGeometry {
    pub blocks_y: usize,
    pub blocks_x: usize,
}

impl BlockGeometry {
    pub fn of(h: usize, w: usize) -> Self {
        BlockGeometry {
            blocks_y: (h / 2) / N,
            blocks_x: (w / 2) / N,
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks_y * self.blocks_x
    }

    pub fn slots(&self) -> usize {
        self.blocks() * SLOTS.len()
    }
}

impl DwtDct {
    pub fn geometry(&self, h: usize, w: usize) -> Result<BlockGeometry> {
        let g = BlockGeometry::of(h, w);
        if g.slots() < self.bits {
            return Err(Error::ImageTooSmall(format!(
                "{h}x{w} gives {} LL blocks ({} slots) for a {}-bit message",
                g.blocks(),
                g.slots(),
                self.bits
            )));
        }
        Ok(g)
    }

    /// Number of LL blocks needed to carry every bit once.
    pub fn blocks_per_cycle(&self) -> usize {
        self.bits.div_ceil(SLOTS.len())
    }

    /// How many times each bit is embedded (minimum over bits).
    pub fn repetitions(&self, h: usize, w: usize) -> Result<usize> {
        Ok(self.geometry(h, w)?.slots() / self.bits)
    }

    /// Offsets to add to the luminance plane so every slot holds its bit.
    pub(crate) fn embed_plane(&self, plane: &[f64], h: usize, w: usize, signs: &[bool]) -> Result<Vec<f64>> {
        let g = self.geometry(h, w)?;
        let mut offset = vec![0.0; h * w];
        for by in 0..g.blocks_y {
            for bx in 0..g.blocks_x {
                let coef = dct2(&ll_block(plane, w, by, bx));
                let mut change: Block = [[0.0; N]; N];
                let block_index = by * g.blocks_x + bx;
                for (j, &(u, v)) in SLOTS.iter().enumerate() {
                    let bit = signs[(block_index * SLOTS.len() + j) % self.bits];
                    change[u][v] = qim_embed(coef[u][v], bit, self.delta) - coef[u][v];
                }
                // Only LL changes, so the inverse Haar step spreads each LL
                // change equally (halved) over its 2×2 pixel cell.
                let d_ll = idct2(&change);
                for (i, row) in d_ll.iter().enumerate() {
                    for (k, &d) in row.iter().enumerate() {
                        let (y, x) = (2 * (by * N + i), 2 * (bx * N + k));
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            offset[(y + dy) * w + x + dx] = d / 2.0;
                        }
                    }
                }
            }
        }
        Ok(offset)
    }

    /// Per-bit vote counts `(ones, total)`.
    pub(crate) fn votes(&self, plane: &[f64], h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let g = self.geometry(h, w)?;
        let mut votes = vec![(0usize, 0usize); self.bits];
        for by in 0..g.blocks_y {
            for bx in 0..g.blocks_x {
                let coef = dct2(&ll_block(plane, w, by, bx));
                let block_index = by * g.blocks_x + bx;
                for (j, &(u, v)) in SLOTS.iter().enumerate() {
                    let slot = &mut votes[(block_index * SLOTS.len() + j) % self.bits];
                    slot.0 += qim_extract(coef[u][v], self.delta) as usize;
                    slot.1 += 1;
                }
            }
        }
        Ok(votes)
    }

    pub(crate) fn extract_plane(&self, plane: &[f64], h: usize, w: usize) -> Result<Vec<bool>> {
        // Ties (even repetition counts) resolve to 0.
        Ok(self
            .votes(plane, h, w)?
            .into_iter()
            .map(|(ones, total)| 2 * ones > total)
            .collect())
    }
}

/// LL coefficients of block `(by, bx)` under the orthonormal Haar transform.
fn ll_block(plane: &[f64], w: usize, by: usize, bx: usize) -> Block {
    let mut b = [[0.0; N]; N];
    for (i, row) in b.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            let (y, x) = (2 * (by * N + i), 2 * (bx * N + k));
            *v = (plane[y * w + x] + plane[y * w + x + 1] + plane[(y + 1) * w + x] + plane[(y + 1) * w + x + 1]) / 2.0;
        }
    }
    b
}

/// Nearest lattice point `q·Δ` whose index parity equals `bit`.
pub(crate) fn qim_embed(c: f64, bit: bool, delta: f64) -> f64 {
    let q = (c / delta).round();
    let parity_ok = (q.rem_euclid(2.0) == 1.0) == bit;
    if parity_ok {
        return q * delta;
    }
    let (lo, hi) = ((q - 1.0) * delta, (q + 1.0) * delta);
    if (c - lo).abs() <= (hi - c).abs() {
        lo
    } else {
        hi
    }
}

pub(crate) fn qim_extract(c: f64, delta: f64) -> bool {
    (c / delta).round().rem_euclid(2.0) == 1.0
}

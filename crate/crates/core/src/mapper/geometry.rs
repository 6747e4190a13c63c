use serde::{Deserialize, Serialize};

use crate::netspec::LayerSpec;
use crate::tensor::FmapShape;

/// Raster-stream geometry of a conv region.
///
/// The input is streamed one padded pixel per slot. A row occupies `lrow`
/// slots and, when the kernel is wider than the padding, the right padding
/// of one row doubles as the left padding of the next, so usually
/// `lrow = W + P`.
/// An output whose top-left window corner sits at slot `b` is called base
/// `b`; tile `(kr, ·, kc)` sees that base's input at slot
/// `b + kr * lrow + kc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_shape: FmapShape,
    pub out_shape: FmapShape,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub lrow: usize,
    /// Channel groups `ceil(C / N_c)`.
    pub cg: usize,
    /// Output-column groups `ceil(M / N_m)`.
    pub mg: usize,
    pub n_c: usize,
    pub n_m: usize,
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

impl ConvGeometry {
    pub fn new(layer: &LayerSpec, in_shape: FmapShape, out_shape: FmapShape, n_c: usize, n_m: usize) -> Self {
        let (k, p) = (layer.kernel, layer.padding);
        let cg = in_shape.channels.div_ceil(n_c);
        let lrow = if k > p {
            in_shape.cols + p
        } else {
            // No shared padding column; keep bases of one row distinct.
            in_shape.cols + 2 * p - k + 1
        };
        // Narrow rows get idle slots so a row block's output can reach the
        // next row block in time.
        let lrow = lrow.max(cg * k);
        Self {
            in_shape,
            out_shape,
            kernel: k,
            stride: layer.stride,
            padding: p,
            lrow,
            cg,
            mg: out_shape.channels.div_ceil(n_m),
            n_c,
            n_m,
        }
    }

    /// Tiles in one replica.
    pub fn tiles(&self) -> usize {
        self.kernel * self.kernel * self.cg * self.mg
    }

    /// Input pixel carried by slot `u`, or `None` for a padding slot.
    pub fn slot_pixel(&self, u: usize) -> Option<(usize, usize)> {
        let (pr, pc) = (u / self.lrow, u % self.lrow);
        let p = self.padding;
        if pr < p || pc < p {
            return None;
        }
        let (r, c) = (pr - p, pc - p);
        (r < self.in_shape.rows && c < self.in_shape.cols).then_some((r, c))
    }

    /// Slot index of input pixel `(r, c)`.
    pub fn pixel_slot(&self, r: usize, c: usize) -> usize {
        (r + self.padding) * self.lrow + c + self.padding
    }

    pub fn base(&self, or: usize, oc: usize) -> usize {
        or * self.stride * self.lrow + oc * self.stride
    }

    /// Output pixel of base `b`, or `None` if that base is masked.
    pub fn base_output(&self, b: usize) -> Option<(usize, usize)> {
        let (br, bc) = (b / self.lrow, b % self.lrow);
        let s = self.stride;
        if br % s != 0 || bc % s != 0 {
            return None;
        }
        let (or, oc) = (br / s, bc / s);
        (or < self.out_shape.rows && oc < self.out_shape.cols).then_some((or, oc))
    }

    /// Schedule period in slots. `replicated` adds the output-row parity
    /// that splits work between pooling replicas.
    pub fn period(&self, replicated: bool) -> usize {
        let rows = if replicated {
            lcm(2, 2 * self.stride)
        } else {
            lcm(2, self.stride)
        };
        rows * self.lrow
    }

    /// Whether phase `phi` (a base modulo the period) is an output base.
    pub fn phase_valid(&self, phi: usize, replicated: bool) -> bool {
        let phi = phi % self.period(replicated);
        let (br, bc) = (phi / self.lrow, phi % self.lrow);
        let s = self.stride;
        br % s == 0 && bc % s == 0 && bc / s < self.out_shape.cols
    }

    /// Output row parity and column parity of phase `phi`.
    pub fn phase_parity(&self, phi: usize) -> (usize, usize) {
        let (br, bc) = (phi / self.lrow, phi % self.lrow);
        ((br / self.stride) % 2, (bc / self.stride) % 2)
    }

    /// Extra lateness of channel group `cg`'s block output.
    pub fn carry_delay(&self, cg: usize) -> usize {
        cg * self.kernel
    }

    /// Slot at which the block `(kr, cg)` forwards its sum for base `b`.
    pub fn block_done(&self, b: usize, kr: usize, cg: usize) -> usize {
        b + kr * self.lrow + self.kernel - 1 + self.carry_delay(cg)
    }

    /// Slot at which the full accumulator of base `b` is complete.
    pub fn output_slot(&self, b: usize) -> usize {
        self.block_done(b, self.kernel - 1, self.cg - 1)
    }

    /// Last base that produces an output.
    pub fn last_base(&self) -> usize {
        self.base(self.out_shape.rows - 1, self.out_shape.cols - 1)
    }

    /// Number of slots the region steps through for one inference.
    pub fn total_slots(&self) -> usize {
        self.output_slot(self.last_base()) + 1
    }

    /// Slots between a row block's output arriving and the next row block
    /// consuming it. Never negative.
    pub fn row_slack(&self) -> isize {
        self.lrow as isize - (self.cg * self.kernel) as isize
    }

    pub fn channel_range(&self, cg: usize) -> std::ops::Range<usize> {
        cg * self.n_c..((cg + 1) * self.n_c).min(self.in_shape.channels)
    }

    pub fn output_range(&self, mg: usize) -> std::ops::Range<usize> {
        mg * self.n_m..((mg + 1) * self.n_m).min(self.out_shape.channels)
    }
}

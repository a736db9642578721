use super::{ProjectedGaussian, TILE_SIZE};

/// Per-tile gaussian lists in compressed-row form. Each tile's slice of
/// `entries` indexes the projected array in ascending view depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub offsets: Vec<u32>,
    pub entries: Vec<u32>,
}

impl TileBins {
    pub fn tile(&self, tx: usize, ty: usize) -> &[u32] {
        let t = ty * self.tiles_x + tx;
        &self.entries[self.offsets[t] as usize..self.offsets[t + 1] as usize]
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

pub fn tile_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(TILE_SIZE), height.div_ceil(TILE_SIZE))
}

/// Global depth order: ascending view depth, ties by position in `projected`.
pub fn depth_order(projected: &[ProjectedGaussian]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        projected[a as usize]
            .depth
            .total_cmp(&projected[b as usize].depth)
            .then(a.cmp(&b))
    });
    order
}

/// Assigns every gaussian to each tile its footprint touches, keeping the
/// global front-to-back order within every tile.
pub fn bin_and_sort(projected: &[ProjectedGaussian], width: usize, height: usize) -> TileBins {
    let (tiles_x, tiles_y) = tile_grid(width, height);
    let order = depth_order(projected);
    let mut counts = vec![0u32; tiles_x * tiles_y + 1];
    for g in projected {
        let [x0, y0, x1, y1] = g.tile_rect;
        for ty in y0..y1 {
            for tx in x0..x1 {
                counts[ty as usize * tiles_x + tx as usize + 1] += 1;
            }
        }
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; *offsets.last().unwrap() as usize];
    for &idx in &order {
        let [x0, y0, x1, y1] = projected[idx as usize].tile_rect;
        for ty in y0..y1 {
            for tx in x0..x1 {
                let t = ty as usize * tiles_x + tx as usize;
                entries[cursor[t] as usize] = idx;
                cursor[t] += 1;
            }
        }
    }
    TileBins {
        tiles_x,
        tiles_y,
        offsets,
        entries,
    }
}

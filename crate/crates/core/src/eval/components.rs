//! Binarization and 8-connected component labeling.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A binary image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::param(format!(
                "binary map of {h}x{w} needs {} pixels, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(BinaryMap { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        BinaryMap {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    /// Pixels of a mask tensor (1, 1, h, w) that are above one half.
    pub fn from_mask(mask: &Tensor) -> Result<Self> {
        let s = mask.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::param(format!("expected a single-plane mask, got {s}")));
        }
        Ok(BinaryMap {
            h: s.h,
            w: s.w,
            data: mask.data().iter().map(|&v| v > 0.5).collect(),
        })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    fn check_same(&self, other: &BinaryMap) -> Result<()> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::param(format!(
                "maps differ in size: {}x{} vs {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }

    /// Chebyshev dilation by `r` pixels.
    pub fn dilate(&self, r: usize) -> BinaryMap {
        if r == 0 {
            return self.clone();
        }
        // separable: rows then columns
        let (h, w) = (self.h, self.w);
        let mut rows = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                if self.data[y * w + x] {
                    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
                    rows[y * w + x0..=y * w + x1].fill(true);
                }
            }
        }
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] {
                    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
                    for yy in y0..=y1 {
                        out[yy * w + x] = true;
                    }
                }
            }
        }
        BinaryMap { h, w, data: out }
    }
}

/// Positive iff `score > threshold`.
pub fn binarize(scores: &Tensor, threshold: f64) -> Result<BinaryMap> {
    let s = scores.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::param(format!("expected a single score plane, got {s}")));
    }
    Ok(BinaryMap {
        h: s.h,
        w: s.w,
        data: scores.data().iter().map(|&v| v > threshold).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    /// Raster indices in increasing order.
    pub pixels: Vec<usize>,
    /// `(y0, x0, y1, x1)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Disjoint 8-connected components, ordered by their first raster pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSet {
    pub h: usize,
    pub w: usize,
    pub components: Vec<Component>,
    /// Component index of each pixel, `None` for background.
    pub labels: Vec<Option<usize>>,
    pub threshold: Option<f64>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // the smaller raster index stays root
    if ra < rb {
        parent[rb] = ra;
    } else if rb < ra {
        parent[ra] = rb;
    }
}

pub fn connected_components(map: &BinaryMap) -> DetectionSet {
    let (h, w) = (map.h, map.w);
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !map.data[i] {
                continue;
            }
            // previously visited neighbours: W, NW, N, NE
            if x > 0 && map.data[i - 1] {
                union(&mut parent, i, i - 1);
            }
            if y > 0 {
                let up = i - w;
                if map.data[up] {
                    union(&mut parent, i, up);
                }
                if x > 0 && map.data[up - 1] {
                    union(&mut parent, i, up - 1);
                }
                if x + 1 < w && map.data[up + 1] {
                    union(&mut parent, i, up + 1);
                }
            }
        }
    }
    let mut labels = vec![None; h * w];
    let mut root_label = vec![usize::MAX; h * w];
    let mut components: Vec<Component> = Vec::new();
    for i in 0..h * w {
        if !map.data[i] {
            continue;
        }
        let r = find(&mut parent, i);
        if root_label[r] == usize::MAX {
            root_label[r] = components.len();
            components.push(Component {
                pixels: Vec::new(),
                bbox: (usize::MAX, usize::MAX, 0, 0),
            });
        }
        let l = root_label[r];
        labels[i] = Some(l);
        let c = &mut components[l];
        c.pixels.push(i);
        let (y, x) = (i / w, i % w);
        c.bbox.0 = c.bbox.0.min(y);
        c.bbox.1 = c.bbox.1.min(x);
        c.bbox.2 = c.bbox.2.max(y);
        c.bbox.3 = c.bbox.3.max(x);
    }
    DetectionSet {
        h,
        w,
        components,
        labels,
        threshold: None,
    }
}

/// Components of `scores > threshold`.
pub fn detect(scores: &Tensor, threshold: f64) -> Result<DetectionSet> {
    let mut set = connected_components(&binarize(scores, threshold)?);
    set.threshold = Some(threshold);
    Ok(set)
}

pub(crate) fn same_size(a: &BinaryMap, b: &BinaryMap) -> Result<()> {
    a.check_same(b)
}

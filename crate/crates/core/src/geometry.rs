//! Axis-aligned boxes in real pixel coordinates and spatial location features.
//!
//! Boxes are closed rectangles with area `(x_max − x_min)·(y_max − y_min)`;
//! there is no +1 pixel convention.

use serde::{Deserialize, Serialize};

use crate::error::{CiteError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

/// Which location encoding, if any, is appended to region features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpatialEncoding {
    #[default]
    None,
    /// `[x_min/W, y_min/H, x_max/W, y_max/H, wh/WH]`
    Flickr,
    /// `[x_min, y_min, x_max, y_max, x_c, y_c, w, h]` normalised by image size.
    Referit,
}

impl SpatialEncoding {
    pub fn dim(self) -> usize {
        match self {
            SpatialEncoding::None => 0,
            SpatialEncoding::Flickr => 5,
            SpatialEncoding::Referit => 8,
        }
    }

    pub fn encode(self, b: &BBox, size: &ImageSize) -> Result<Vec<f64>> {
        match self {
            SpatialEncoding::None => Ok(Vec::new()),
            SpatialEncoding::Flickr => encode_spatial_flickr(b, size).map(|v| v.to_vec()),
            SpatialEncoding::Referit => encode_spatial_referit(b, size).map(|v| v.to_vec()),
        }
    }
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn validate(&self) -> Result<()> {
        let coords = self.to_array();
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(CiteError::Validation(format!("non-finite box {coords:?}")));
        }
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(CiteError::Validation(format!(
                "box has min > max: {coords:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Intersection with the image rectangle `[0,W]×[0,H]`.
    pub fn clamp_to(&self, size: &ImageSize) -> BBox {
        let cx = |v: f64| v.clamp(0.0, size.width);
        let cy = |v: f64| v.clamp(0.0, size.height);
        BBox {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }
}

impl ImageSize {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        let s = Self { width, height };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) || !self.width.is_finite() || !self.height.is_finite() {
            return Err(CiteError::Validation(format!(
                "image size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Intersection over union. Zero whenever either box has zero area.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 || area_b <= 0.0 {
        return Ok(0.0);
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / (area_a + area_b - inter)).clamp(0.0, 1.0))
}

/// Coordinate-wise envelope of a non-empty box list.
pub fn union_box(boxes: &[BBox]) -> Result<BBox> {
    let (first, rest) = boxes
        .split_first()
        .ok_or_else(|| CiteError::Validation("union of an empty box list".into()))?;
    first.validate()?;
    rest.iter().try_fold(*first, |acc, b| {
        b.validate()?;
        Ok(BBox {
            x_min: acc.x_min.min(b.x_min),
            y_min: acc.y_min.min(b.y_min),
            x_max: acc.x_max.max(b.x_max),
            y_max: acc.y_max.max(b.y_max),
        })
    })
}

pub fn encode_spatial_flickr(b: &BBox, size: &ImageSize) -> Result<[f64; 5]> {
    size.validate()?;
    b.validate()?;
    let c = b.clamp_to(size);
    let (w, h) = (size.width, size.height);
    Ok([
        c.x_min / w,
        c.y_min / h,
        c.x_max / w,
        c.y_max / h,
        c.area() / (w * h),
    ])
}

pub fn encode_spatial_referit(b: &BBox, size: &ImageSize) -> Result<[f64; 8]> {
    size.validate()?;
    b.validate()?;
    let c = b.clamp_to(size);
    let (w, h) = (size.width, size.height);
    let (xc, yc) = c.center();
    Ok([
        c.x_min / w,
        c.y_min / h,
        c.x_max / w,
        c.y_max / h,
        xc / w,
        yc / h,
        c.width() / w,
        c.height() / h,
    ])
}

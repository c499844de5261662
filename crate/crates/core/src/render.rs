//! Text PPM renderings of layout sets: a soft composite where each layout
//! is its class color at opacity equal to the layout value, and a hard
//! argmax assignment.

use std::collections::BTreeMap;

use crate::geometry::LayoutSet;
use crate::metrics::DEFAULT_THRESHOLD;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn black(height: usize, width: usize) -> Self {
        Image { height, width, pixels: vec![[0, 0, 0]; height * width] }
    }

    /// Plain (`P3`) PPM, one pixel row per line.
    pub fn to_ppm(&self) -> String {
        let mut out = format!("P3\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|p| format!("{} {} {}", p[0], p[1], p[2])).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Class name to color; unknown names get a color hashed from the name.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub colors: BTreeMap<String, Rgb>,
}

impl Default for Palette {
    fn default() -> Self {
        let colors = [
            ("sky", [110, 170, 235]),
            ("wall", [190, 180, 160]),
            ("grass", [70, 160, 60]),
            ("sea", [30, 80, 170]),
            ("road", [110, 110, 110]),
            ("sun", [250, 210, 40]),
            ("cloud", [240, 240, 245]),
            ("tree", [30, 100, 40]),
            ("house", [180, 70, 50]),
            ("person", [230, 150, 120]),
            ("ball", [240, 120, 20]),
        ];
        Palette { colors: colors.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

impl Palette {
    /// Color for `name` and whether it came from the fallback.
    pub fn color(&self, name: &str) -> (Rgb, bool) {
        match self.colors.get(name) {
            Some(c) => (*c, false),
            None => (fallback_color(name), true),
        }
    }

    /// Colors for a list of class names plus the names that had no entry.
    pub fn resolve(&self, names: &[&str]) -> (Vec<Rgb>, Vec<String>) {
        let mut missing = Vec::new();
        let colors = names
            .iter()
            .map(|n| {
                let (c, fell_back) = self.color(n);
                if fell_back && !missing.iter().any(|m: &String| m == n) {
                    missing.push(n.to_string());
                }
                c
            })
            .collect();
        (colors, missing)
    }
}

/// FNV-1a of the name mapped into the upper part of each channel, so
/// fallback colors are never black.
pub fn fallback_color(name: &str) -> Rgb {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    [0, 1, 2].map(|k| 64 + ((h >> (8 * k)) & 0xff) as u8 % 192)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 255.0)).round() as u8
}

/// Layouts composited in object order over black.
pub fn render_soft(ls: &LayoutSet, colors: &[Rgb]) -> Image {
    let (h, w) = ls.grid();
    let mut acc = vec![[0.0f64; 3]; h * w];
    for (l, color) in ls.layouts.iter().zip(colors) {
        for (px, &a) in acc.iter_mut().zip(&l.data) {
            let a = a.clamp(0.0, 1.0);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - a) + color[c] as f64 * a;
            }
        }
    }
    Image { height: h, width: w, pixels: acc.into_iter().map(|p| p.map(to_byte)).collect() }
}

/// Each pixel takes the color of its highest layout; pixels where no
/// layout reaches 0.5 stay black. Ties go to the earlier object.
pub fn render_hard(ls: &LayoutSet, colors: &[Rgb]) -> Image {
    let (h, w) = ls.grid();
    let mut img = Image::black(h, w);
    for (p, px) in img.pixels.iter_mut().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (k, l) in ls.layouts.iter().enumerate() {
            let v = l.data[p];
            if v >= DEFAULT_THRESHOLD && best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        if let Some((k, _)) = best {
            *px = colors[k];
        }
    }
    img
}

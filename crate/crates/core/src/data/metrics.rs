use serde::{Deserialize, Serialize};

use crate::data::color::{quantize, rgb_to_y};
use crate::data::dataset::ImagePair;
use crate::data::dihedral::self_ensemble;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn cropped_pairs<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, crop: usize, op: &'static str) -> Result<Vec<(Vec<f64>, Vec<f64>, usize, usize)>> {
    a.expect_same_shape(b, op)?;
    let s = a.shape();
    if 2 * crop >= s.h || 2 * crop >= s.w {
        return Err(Error::dim(op, format!("border crop {crop} leaves nothing of {s:?}")));
    }
    let (h, w) = (s.h - 2 * crop, s.w - 2 * crop);
    let plane = |t: &Tensor<T>, n, c| -> Vec<f64> {
        let p = t.plane(n, c);
        (crop..crop + h)
            .flat_map(|y| p[y * s.w + crop..y * s.w + crop + w].iter().map(|v| v.as_f64()))
            .collect()
    };
    Ok((0..s.n)
        .flat_map(|n| (0..s.c).map(move |c| (n, c)))
        .map(|(n, c)| (plane(a, n, c), plane(b, n, c), h, w))
        .collect())
}

/// `10 log10(1 / MSE)` over all channels after removing a `crop`-pixel
/// border; capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, crop: usize) -> Result<f64> {
    let planes = cropped_pairs(a, b, crop, "psnr")?;
    let (mut se, mut count) = (0.0, 0usize);
    for (pa, pb, _, _) in &planes {
        se += pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        count += pa.len();
    }
    let mse = se / count as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|k| g[k / SSIM_WINDOW] * g[k % SSIM_WINDOW] / total)
        .collect()
}

/// Valid-region separable Gaussian filter.
fn filter_valid(p: &[f64], h: usize, w: usize, g1: &[f64]) -> Vec<f64> {
    let k = g1.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g1[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g1[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over every valid 11x11 Gaussian window
/// (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1), averaged over planes.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, crop: usize) -> Result<f64> {
    let planes = cropped_pairs(a, b, crop, "ssim")?;
    let (h, w) = (planes[0].2, planes[0].3);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim("ssim", format!("{h}x{w} region is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g2 = gaussian_window();
    let g1: Vec<f64> = (0..SSIM_WINDOW).map(|i| g2[i * SSIM_WINDOW + i].sqrt()).collect();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for (pa, pb, _, _) in &planes {
        let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
        let mu_a = filter_valid(pa, h, w, &g1);
        let mu_b = filter_valid(pb, h, w, &g1);
        let saa = filter_valid(&prod(pa, pa), h, w, &g1);
        let sbb = filter_valid(&prod(pb, pb), h, w, &g1);
        let sab = filter_valid(&prod(pa, pb), h, w, &g1);
        let n = mu_a.len();
        let mean: f64 = (0..n)
            .map(|i| {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let (va, vb, cov) = (saa[i] - ma * ma, sbb[i] - mb * mb, sab[i] - ma * mb);
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .sum::<f64>()
            / n as f64;
        total += mean;
    }
    Ok(total / planes.len() as f64)
}

/// PSNR on the luminance channel of two RGB images.
pub fn psnr_y<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, crop: usize) -> Result<f64> {
    psnr(&rgb_to_y(a)?, &rgb_to_y(b)?, crop)
}

pub fn ssim_y<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, crop: usize) -> Result<f64> {
    ssim(&rgb_to_y(a)?, &rgb_to_y(b)?, crop)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_ensemble_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_ensemble: Option<f64>,
}

/// Per-image and mean Y-channel scores, sorted by image name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scale: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    fn mean_of(&self, f: impl Fn(&EvalRecord) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter_map(f).collect();
        (!v.is_empty() && v.len() == self.records.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean_of(|r| Some(r.psnr_db)).unwrap_or(f64::NAN)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean_of(|r| Some(r.ssim)).unwrap_or(f64::NAN)
    }

    pub fn mean_psnr_ensemble(&self) -> Option<f64> {
        self.mean_of(|r| r.psnr_ensemble_db)
    }

    pub fn mean_ssim_ensemble(&self) -> Option<f64> {
        self.mean_of(|r| r.ssim_ensemble)
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let ens = self.mean_psnr_ensemble().is_some();
        let width = self.records.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut s = format!("{:<width$}  {:>9}  {:>7}", "name", "psnr_db", "ssim");
        if ens {
            s += &format!("  {:>9}  {:>7}", "psnr+_db", "ssim+");
        }
        s.push('\n');
        let row = |name: &str, p: f64, q: f64, pe: Option<f64>, qe: Option<f64>| {
            let mut l = format!("{name:<width$}  {p:>9.4}  {q:>7.4}");
            if let (Some(pe), Some(qe)) = (pe, qe) {
                l += &format!("  {pe:>9.4}  {qe:>7.4}");
            }
            l + "\n"
        };
        for r in &self.records {
            s += &row(&r.name, r.psnr_db, r.ssim, r.psnr_ensemble_db, r.ssim_ensemble);
        }
        s += &row("mean", self.mean_psnr(), self.mean_ssim(), self.mean_psnr_ensemble(), self.mean_ssim_ensemble());
        s
    }

    /// One JSON object per image, one per line.
    pub fn json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }
}

/// Score `predict` on every pair: outputs are quantized to 8 bits, then
/// compared on Y with a `scale`-pixel border removed.
pub fn evaluate<T, F>(pairs: &[ImagePair<T>], ensemble: bool, predict: F) -> Result<EvalReport>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let scale = pairs.first().map_or(0, |p| p.scale);
    let mut records = Vec::with_capacity(pairs.len());
    for p in pairs {
        let sr = quantize(&predict(&p.lr)?);
        let mut rec = EvalRecord {
            name: p.name.clone(),
            psnr_db: psnr_y(&sr, &p.hr, p.scale)?,
            ssim: ssim_y(&sr, &p.hr, p.scale)?,
            psnr_ensemble_db: None,
            ssim_ensemble: None,
        };
        if ensemble {
            let sr = quantize(&self_ensemble(&p.lr, &predict)?);
            rec.psnr_ensemble_db = Some(psnr_y(&sr, &p.hr, p.scale)?);
            rec.ssim_ensemble = Some(ssim_y(&sr, &p.hr, p.scale)?);
        }
        records.push(rec);
    }
    records.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(EvalReport { scale, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::verify::oracles::{direct_psnr, direct_ssim};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_closed_forms() {
        let a = Tensor::<f64>::full(Shape::new(1, 1, 8, 8), 0.3);
        assert_eq!(psnr(&a, &a, 2).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 2).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Tensor::zeros(Shape::new(1, 1, 8, 7)), 0).is_err());
    }

    #[test]
    fn ssim_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 16, 16), 0.0, 1.0, &mut rng);
        assert_eq!(ssim(&a, &a, 0).unwrap(), 1.0);
        assert!(ssim(&a, &a.map(|v| 1.0 - v), 0).unwrap() < 1.0);
        assert!(ssim(&a, &a, 4).is_err());
    }

    #[test]
    fn metrics_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 20, 18), 0.0, 1.0, &mut rng);
            let b = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 20, 18), 0.0, 1.0, &mut rng);
            assert!((psnr(&a, &b, 2).unwrap() - direct_psnr(&a, &b, 2)).abs() <= 1e-6);
            assert!((ssim(&a, &b, 2).unwrap() - direct_ssim(&a, &b, 2)).abs() <= 1e-4);
        }
    }

    #[test]
    fn report_means_and_formats() {
        let r = EvalReport {
            scale: 2,
            records: vec![
                EvalRecord { name: "a".into(), psnr_db: 30.0, ssim: 0.9, psnr_ensemble_db: None, ssim_ensemble: None },
                EvalRecord { name: "b".into(), psnr_db: 32.0, ssim: 0.8, psnr_ensemble_db: None, ssim_ensemble: None },
            ],
        };
        assert_eq!(r.mean_psnr(), 31.0);
        assert!((r.mean_ssim() - 0.85).abs() < 1e-12);
        assert!(r.table().lines().last().unwrap().starts_with("mean"));
        assert_eq!(r.json_lines().lines().count(), 2);
        assert!(r.json_lines().starts_with("{\"name\":\"a\",\"psnr_db\":30.0"));
    }
}

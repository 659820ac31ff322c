//! Small numeric toolkit: standard-normal quantile/CDF, compensated
//! summation, and sample diagnostics used by the simulation reports.

/// Horner evaluation with coefficients ordered from the highest power
/// down to the constant term.
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Standard-normal quantile via Wichura's AS 241 (PPND16) rational
/// approximation; absolute error below 1e-15 on (0, 1).
///
/// Panics on `p` outside (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile requires p in (0,1), got {p}");
    const A: [f64; 8] = [
        2.509_080_928_730_122_7e3,
        3.343_057_558_358_812_8e4,
        6.726_577_092_700_870_1e4,
        4.592_195_393_154_987_1e4,
        1.373_169_376_550_946_1e4,
        1.971_590_950_306_551_3e3,
        1.331_416_678_917_843_8e2,
        3.387_132_872_796_366_5,
    ];
    const B: [f64; 8] = [
        5.226_495_278_852_545_5e3,
        2.872_908_573_572_194_3e4,
        3.930_789_580_009_271e4,
        2.121_379_430_158_659_7e4,
        5.394_196_021_424_751e3,
        6.871_870_074_920_579e2,
        4.231_333_070_160_091e1,
        1.0,
    ];
    const C: [f64; 8] = [
        7.745_450_142_783_414e-4,
        2.272_384_498_926_918_4e-2,
        2.417_807_251_774_506e-1,
        1.270_458_252_452_368_4,
        3.647_848_324_763_204_5,
        5.769_497_221_460_691,
        4.630_337_846_156_545,
        1.423_437_110_749_683_5,
    ];
    const D: [f64; 8] = [
        1.050_750_071_644_416_9e-9,
        5.475_938_084_995_345e-4,
        1.519_866_656_361_645_7e-2,
        1.481_039_764_274_800_8e-1,
        6.897_673_349_851e-1,
        1.676_384_830_183_803_8,
        2.053_191_626_637_759,
        1.0,
    ];
    const E: [f64; 8] = [
        2.010_334_399_292_288_1e-7,
        2.711_555_568_743_487_6e-5,
        1.242_660_947_388_078_4e-3,
        2.653_218_952_657_612_4e-2,
        2.965_605_718_285_048_7e-1,
        1.784_826_539_917_291_3,
        5.463_784_911_164_114,
        6.657_904_643_501_103,
    ];
    const F: [f64; 8] = [
        1.421_511_758_316_446e-15,
        1.846_318_317_510_054_8e-6,
        7.868_691_311_456_133e-4,
        1.487_536_129_085_061_5e-2,
        1.369_298_809_227_358e-1,
        5.998_322_065_558_88e-1,
        1.0,
        1.0,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        // D has an implicit leading term of degree 7 and constant 1; the
        // published form is sum_{i} d_i r^i with d_0 = 1, so evaluate the
        // degree-7 numerator against the degree-7 denominator directly.
        horner(&C, r) / (horner(&D[..7], r) * r + 1.0)
    } else {
        r -= 5.0;
        horner(&E, r) / (horner(&F[..6], r) * r + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard-normal CDF (West 2004 double-precision algorithm).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x.abs();
    let c = if z > 37.0 {
        0.0
    } else {
        let e = (-z * z / 2.0).exp();
        if z < 7.071_067_811_865_475 {
            let mut num = 3.526_249_659_989_11e-2 * z + 0.700_383_064_443_688;
            num = num * z + 6.373_962_203_531_65;
            num = num * z + 33.912_866_078_383;
            num = num * z + 112.079_291_497_871;
            num = num * z + 221.213_596_169_931;
            num = num * z + 220.206_867_912_376;
            let mut den = 8.838_834_764_831_84e-2 * z + 1.755_667_163_182_64;
            den = den * z + 16.064_177_579_207;
            den = den * z + 86.780_732_202_946_1;
            den = den * z + 296.564_248_779_674;
            den = den * z + 637.333_633_378_831;
            den = den * z + 793.826_512_519_948;
            den = den * z + 440.413_735_824_752;
            e * num / den
        } else {
            let mut b = z + 0.65;
            b = z + 4.0 / b;
            b = z + 3.0 / b;
            b = z + 2.0 / b;
            b = z + 1.0 / b;
            e / (b * 2.506_628_274_631_000_5)
        }
    };
    if x > 0.0 {
        1.0 - c
    } else {
        c
    }
}

/// Two-sided p-value for a standard-normal test statistic.
pub fn two_sided_p_value(statistic: f64) -> f64 {
    2.0 * normal_cdf(-statistic.abs())
}

/// Kahan compensated accumulator. The enumeration oracle sums hundreds of
/// thousands of signed atom contributions and the tests assert equalities
/// down to 1e-12, so plain f64 accumulation is not enough.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Mean of a slice (0.0 for empty input).
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut s = KahanSum::new();
    for &x in xs {
        s.add(x);
    }
    s.value() / xs.len() as f64
}

/// Unbiased sample variance (n-1 denominator); 0.0 when fewer than 2 points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut s = KahanSum::new();
    for &x in xs {
        s.add((x - m) * (x - m));
    }
    s.value() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn mean_se(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Normality diagnostics of a sample after standardization.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NormalitySummary {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
}

/// Skewness, excess kurtosis, and the Kolmogorov–Smirnov distance between
/// the standardized sample and the standard normal distribution.
pub fn normality_summary(xs: &[f64]) -> NormalitySummary {
    let n = xs.len();
    assert!(n >= 2, "normality_summary needs at least 2 samples");
    let m = mean(xs);
    let nf = n as f64;
    let (mut m2, mut m3, mut m4) = (KahanSum::new(), KahanSum::new(), KahanSum::new());
    for &x in xs {
        let d = x - m;
        m2.add(d * d);
        m3.add(d * d * d);
        m4.add(d * d * d * d);
    }
    let m2 = m2.value() / nf;
    let m3 = m3.value() / nf;
    let m4 = m4.value() / nf;
    let sd = m2.sqrt();

    let mut sorted: Vec<f64> = xs.iter().map(|&x| (x - m) / sd).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ks: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        let hi = (i + 1) as f64 / nf - cdf;
        let lo = cdf - i as f64 / nf;
        ks = ks.max(hi).max(lo);
    }

    NormalitySummary {
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        ks_distance: ks,
    }
}

/// (theoretical, sample) quantile pairs of the standardized sample, for
/// external Q-Q plotting.
pub fn qq_pairs(xs: &[f64]) -> Vec<(f64, f64)> {
    let n = xs.len();
    assert!(n >= 2);
    let m = mean(xs);
    let sd = sample_variance(xs).sqrt();
    let mut sorted: Vec<f64> = xs.iter().map(|&x| (x - m) / sd).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| (normal_quantile((i as f64 + 0.5) / n as f64), s))
        .collect()
}

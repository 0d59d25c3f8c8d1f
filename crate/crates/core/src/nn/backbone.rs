//! Desk-scale convolutional backbones in three architectural styles:
//! residual, parallel-path and densely connected. Each family has a fixed
//! feature width, and every family ends with `final activation -> global
//! average pool -> feature vector`, which keeps class-activation mapping
//! uniform across families.

use ndarray::{Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    avgpool3_backward, avgpool3_s1, gap, gap_backward, maxpool2, maxpool2_backward, relu,
    relu_backward, Conv2d, ConvCache, Param,
};

/// Backbone architecture family. All branches of a multi-input model must
/// share one family so their feature dimensions match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneFamily {
    #[serde(rename = "resnet50-class")]
    Resnet50Class,
    #[serde(rename = "inception-v3-class")]
    InceptionV3Class,
    #[serde(rename = "densenet121-class")]
    Densenet121Class,
}

impl BackboneFamily {
    pub const ALL: [BackboneFamily; 3] =
        [BackboneFamily::Resnet50Class, BackboneFamily::InceptionV3Class, BackboneFamily::Densenet121Class];

    /// Feature dimension is fixed by the family.
    pub fn feature_dim(self) -> usize {
        match self {
            BackboneFamily::Resnet50Class => 64,
            BackboneFamily::InceptionV3Class => 48,
            BackboneFamily::Densenet121Class => 44,
        }
    }

    /// Native square input size in pixels.
    pub fn input_size(self) -> u32 {
        48
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneFamily::Resnet50Class => "resnet50-class",
            BackboneFamily::InceptionV3Class => "inception-v3-class",
            BackboneFamily::Densenet121Class => "densenet121-class",
        }
    }

    pub fn parse(s: &str) -> Option<BackboneFamily> {
        match s.trim().to_ascii_lowercase().as_str() {
            "resnet50-class" | "resnet" => Some(BackboneFamily::Resnet50Class),
            "inception-v3-class" | "inception" => Some(BackboneFamily::InceptionV3Class),
            "densenet121-class" | "densenet" => Some(BackboneFamily::Densenet121Class),
            _ => None,
        }
    }
}

impl std::fmt::Display for BackboneFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Shared building blocks
// ---------------------------------------------------------------------------

/// Channel-axis concat producing a standard-layout array (the GEMM path
/// requires contiguous inputs).
fn concat_channels(parts: &[&Array4<f64>]) -> Array4<f64> {
    let (n, _, h, w) = parts[0].dim();
    let total: usize = parts.iter().map(|p| p.dim().1).sum();
    let mut out = Array4::<f64>::zeros((n, total, h, w));
    let mut offset = 0;
    for p in parts {
        let c = p.dim().1;
        out.slice_mut(ndarray::s![.., offset..offset + c, .., ..]).assign(p);
        offset += c;
    }
    out
}

#[derive(Debug, Clone)]
pub struct ConvRelu {
    pub conv: Conv2d,
}

#[derive(Debug, Clone)]
pub struct ConvReluCache {
    conv: ConvCache,
    y: Array4<f64>,
}

impl ConvRelu {
    fn new(rng: &mut impl Rng, name: &str, in_c: usize, out_c: usize, k: usize, pad: usize) -> Self {
        ConvRelu { conv: Conv2d::new(rng, name, in_c, out_c, k, pad) }
    }

    fn forward(&self, x: &Array4<f64>, cache: Option<&mut Option<ConvReluCache>>) -> Array4<f64> {
        let mut conv_cache = None;
        let y = relu(&self.conv.forward(x, cache.is_some().then_some(&mut conv_cache)));
        if let Some(slot) = cache {
            *slot = Some(ConvReluCache { conv: conv_cache.expect("filled"), y: y.clone() });
        }
        y
    }

    fn backward(&mut self, cache: &ConvReluCache, dout: &Array4<f64>) -> Array4<f64> {
        let dy = relu_backward(dout, &cache.y);
        self.conv.backward(&cache.conv, &dy)
    }
}

#[derive(Debug, Clone)]
struct PoolCache {
    arg: Array4<u8>,
    in_hw: (usize, usize),
}

fn pool_forward(x: &Array4<f64>, cache: Option<&mut Option<PoolCache>>) -> Array4<f64> {
    let (_, _, h, w) = x.dim();
    let (y, arg) = maxpool2(x);
    if let Some(slot) = cache {
        *slot = Some(PoolCache { arg, in_hw: (h, w) });
    }
    y
}

/// Two 3x3 convolutions with an identity skip: `relu(x + b(relu(a(x))))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub a: Conv2d,
    pub b: Conv2d,
}

#[derive(Debug, Clone)]
pub struct ResBlockCache {
    a: ConvCache,
    mid: Array4<f64>,
    b: ConvCache,
    out: Array4<f64>,
}

impl ResBlock {
    fn new(rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        ResBlock {
            a: Conv2d::new(rng, &format!("{name}.a"), channels, channels, 3, 1),
            b: Conv2d::new(rng, &format!("{name}.b"), channels, channels, 3, 1),
        }
    }

    fn forward(&self, x: &Array4<f64>, cache: Option<&mut Option<ResBlockCache>>) -> Array4<f64> {
        let mut ca = None;
        let mut cb = None;
        let with_cache = cache.is_some();
        let mid = relu(&self.a.forward(x, with_cache.then_some(&mut ca)));
        let yb = self.b.forward(&mid, with_cache.then_some(&mut cb));
        let out = relu(&(x + &yb));
        if let Some(slot) = cache {
            *slot = Some(ResBlockCache {
                a: ca.expect("filled"),
                mid,
                b: cb.expect("filled"),
                out: out.clone(),
            });
        }
        out
    }

    fn backward(&mut self, cache: &ResBlockCache, dout: &Array4<f64>) -> Array4<f64> {
        let dsum = relu_backward(dout, &cache.out);
        let dmid = self.b.backward(&cache.b, &dsum);
        let dmid = relu_backward(&dmid, &cache.mid);
        let dx = self.a.backward(&cache.a, &dmid);
        dx + &dsum
    }
}

/// Parallel 1x1 / 3x3 / pooled-1x1 paths concatenated on the channel axis.
#[derive(Debug, Clone)]
pub struct InceptionBlock {
    pub p1: Conv2d,
    pub p3: Conv2d,
    pub pp: Conv2d,
}

#[derive(Debug, Clone)]
pub struct InceptionCache {
    c1: ConvCache,
    y1: Array4<f64>,
    c3: ConvCache,
    y3: Array4<f64>,
    cp: ConvCache,
    yp: Array4<f64>,
}

impl InceptionBlock {
    fn new(rng: &mut impl Rng, name: &str, in_c: usize, c1: usize, c3: usize, cp: usize) -> Self {
        InceptionBlock {
            p1: Conv2d::new(rng, &format!("{name}.p1"), in_c, c1, 1, 0),
            p3: Conv2d::new(rng, &format!("{name}.p3"), in_c, c3, 3, 1),
            pp: Conv2d::new(rng, &format!("{name}.pp"), in_c, cp, 1, 0),
        }
    }

    fn out_channels(&self) -> usize {
        self.p1.out_channels + self.p3.out_channels + self.pp.out_channels
    }

    fn forward(&self, x: &Array4<f64>, cache: Option<&mut Option<InceptionCache>>) -> Array4<f64> {
        let with_cache = cache.is_some();
        let mut c1 = None;
        let mut c3 = None;
        let mut cp = None;
        let y1 = relu(&self.p1.forward(x, with_cache.then_some(&mut c1)));
        let y3 = relu(&self.p3.forward(x, with_cache.then_some(&mut c3)));
        let pooled = avgpool3_s1(x);
        let yp = relu(&self.pp.forward(&pooled, with_cache.then_some(&mut cp)));
        let out = concat_channels(&[&y1, &y3, &yp]);
        if let Some(slot) = cache {
            *slot = Some(InceptionCache {
                c1: c1.expect("filled"),
                y1,
                c3: c3.expect("filled"),
                y3,
                cp: cp.expect("filled"),
                yp,
            });
        }
        out
    }

    fn backward(&mut self, cache: &InceptionCache, dout: &Array4<f64>) -> Array4<f64> {
        let n1 = self.p1.out_channels;
        let n3 = self.p3.out_channels;
        let d1 = dout.slice(ndarray::s![.., 0..n1, .., ..]).to_owned();
        let d3 = dout.slice(ndarray::s![.., n1..n1 + n3, .., ..]).to_owned();
        let dp = dout.slice(ndarray::s![.., n1 + n3.., .., ..]).to_owned();

        let d1 = relu_backward(&d1, &cache.y1);
        let dx1 = self.p1.backward(&cache.c1, &d1);
        let d3 = relu_backward(&d3, &cache.y3);
        let dx3 = self.p3.backward(&cache.c3, &d3);
        let dp = relu_backward(&dp, &cache.yp);
        let dpool = self.pp.backward(&cache.cp, &dp);
        let dxp = avgpool3_backward(&dpool);
        dx1 + &dx3 + &dxp
    }
}

/// Two growth layers, each consuming the concatenation of everything before
/// it: output is `[x, y1, y2]` on the channel axis.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub l1: Conv2d,
    pub l2: Conv2d,
    in_c: usize,
    growth: usize,
}

#[derive(Debug, Clone)]
pub struct DenseBlockCache {
    c1: ConvCache,
    y1: Array4<f64>,
    c2: ConvCache,
    y2: Array4<f64>,
}

impl DenseBlock {
    fn new(rng: &mut impl Rng, name: &str, in_c: usize, growth: usize) -> Self {
        DenseBlock {
            l1: Conv2d::new(rng, &format!("{name}.l1"), in_c, growth, 3, 1),
            l2: Conv2d::new(rng, &format!("{name}.l2"), in_c + growth, growth, 3, 1),
            in_c,
            growth,
        }
    }

    fn out_channels(&self) -> usize {
        self.in_c + 2 * self.growth
    }

    fn forward(&self, x: &Array4<f64>, cache: Option<&mut Option<DenseBlockCache>>) -> Array4<f64> {
        let with_cache = cache.is_some();
        let mut c1 = None;
        let mut c2 = None;
        let y1 = relu(&self.l1.forward(x, with_cache.then_some(&mut c1)));
        let cat1 = concat_channels(&[x, &y1]);
        let y2 = relu(&self.l2.forward(&cat1, with_cache.then_some(&mut c2)));
        let out = concat_channels(&[&cat1, &y2]);
        if let Some(slot) = cache {
            *slot = Some(DenseBlockCache { c1: c1.expect("filled"), y1, c2: c2.expect("filled"), y2 });
        }
        out
    }

    fn backward(&mut self, cache: &DenseBlockCache, dout: &Array4<f64>) -> Array4<f64> {
        let (in_c, g) = (self.in_c, self.growth);
        // dout splits as [d_cat1 | d_y2].
        let d_cat1_direct = dout.slice(ndarray::s![.., 0..in_c + g, .., ..]).to_owned();
        let d_y2 = dout.slice(ndarray::s![.., in_c + g.., .., ..]).to_owned();

        let d_y2 = relu_backward(&d_y2, &cache.y2);
        let d_cat1 = self.l2.backward(&cache.c2, &d_y2) + &d_cat1_direct;

        let d_x_direct = d_cat1.slice(ndarray::s![.., 0..in_c, .., ..]).to_owned();
        let d_y1 = d_cat1.slice(ndarray::s![.., in_c.., .., ..]).to_owned();
        let d_y1 = relu_backward(&d_y1, &cache.y1);
        let d_x = self.l1.backward(&cache.c1, &d_y1);
        d_x + &d_x_direct
    }
}

// ---------------------------------------------------------------------------
// Family nets
// ---------------------------------------------------------------------------

/// Residual-style: stem, three residual stages with widening convs between.
#[derive(Debug, Clone)]
pub struct ResNetSmall {
    pub stem: ConvRelu,
    pub res1: ResBlock,
    pub widen1: ConvRelu,
    pub res2: ResBlock,
    pub widen2: ConvRelu,
    pub res3: ResBlock,
    cache: Option<ResNetCaches>,
}

#[derive(Debug, Clone)]
struct ResNetCaches {
    stem: ConvReluCache,
    pool1: PoolCache,
    res1: ResBlockCache,
    pool2: PoolCache,
    widen1: ConvReluCache,
    res2: ResBlockCache,
    pool3: PoolCache,
    widen2: ConvReluCache,
    res3: ResBlockCache,
    a_hw: (usize, usize),
}

impl ResNetSmall {
    fn new(rng: &mut impl Rng) -> Self {
        ResNetSmall {
            stem: ConvRelu::new(rng, "stem", 3, 16, 3, 1),
            res1: ResBlock::new(rng, "res1", 16),
            widen1: ConvRelu::new(rng, "widen1", 16, 32, 3, 1),
            res2: ResBlock::new(rng, "res2", 32),
            widen2: ConvRelu::new(rng, "widen2", 32, 64, 3, 1),
            res3: ResBlock::new(rng, "res3", 64),
            cache: None,
        }
    }

    fn forward_explain(&self, x: &Array4<f64>) -> (Array2<f64>, Array4<f64>) {
        let y = self.stem.forward(x, None);
        let y = pool_forward(&y, None);
        let y = self.res1.forward(&y, None);
        let y = pool_forward(&y, None);
        let y = self.widen1.forward(&y, None);
        let y = self.res2.forward(&y, None);
        let y = pool_forward(&y, None);
        let y = self.widen2.forward(&y, None);
        let a = self.res3.forward(&y, None);
        (gap(&a), a)
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let mut stem = None;
        let mut pool1 = None;
        let mut res1 = None;
        let mut pool2 = None;
        let mut widen1 = None;
        let mut res2 = None;
        let mut pool3 = None;
        let mut widen2 = None;
        let mut res3 = None;

        let y = self.stem.forward(x, Some(&mut stem));
        let y = pool_forward(&y, Some(&mut pool1));
        let y = self.res1.forward(&y, Some(&mut res1));
        let y = pool_forward(&y, Some(&mut pool2));
        let y = self.widen1.forward(&y, Some(&mut widen1));
        let y = self.res2.forward(&y, Some(&mut res2));
        let y = pool_forward(&y, Some(&mut pool3));
        let y = self.widen2.forward(&y, Some(&mut widen2));
        let a = self.res3.forward(&y, Some(&mut res3));
        let (_, _, h, w) = a.dim();
        self.cache = Some(ResNetCaches {
            stem: stem.unwrap(),
            pool1: pool1.unwrap(),
            res1: res1.unwrap(),
            pool2: pool2.unwrap(),
            widen1: widen1.unwrap(),
            res2: res2.unwrap(),
            pool3: pool3.unwrap(),
            widen2: widen2.unwrap(),
            res3: res3.unwrap(),
            a_hw: (h, w),
        });
        gap(&a)
    }

    fn backward(&mut self, dfeat: &Array2<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("forward_train before backward");
        let da = gap_backward(dfeat, cache.a_hw);
        let d = self.res3.backward(&cache.res3, &da);
        let d = self.widen2.backward(&cache.widen2, &d);
        let d = maxpool2_backward(&d, &cache.pool3.arg, cache.pool3.in_hw);
        let d = self.res2.backward(&cache.res2, &d);
        let d = self.widen1.backward(&cache.widen1, &d);
        let d = maxpool2_backward(&d, &cache.pool2.arg, cache.pool2.in_hw);
        let d = self.res1.backward(&cache.res1, &d);
        let d = maxpool2_backward(&d, &cache.pool1.arg, cache.pool1.in_hw);
        self.stem.backward(&cache.stem, &d)
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        p.extend(self.stem.conv.params());
        p.extend(self.res1.a.params());
        p.extend(self.res1.b.params());
        p.extend(self.widen1.conv.params());
        p.extend(self.res2.a.params());
        p.extend(self.res2.b.params());
        p.extend(self.widen2.conv.params());
        p.extend(self.res3.a.params());
        p.extend(self.res3.b.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        p.extend(self.stem.conv.params_mut());
        p.extend(self.res1.a.params_mut());
        p.extend(self.res1.b.params_mut());
        p.extend(self.widen1.conv.params_mut());
        p.extend(self.res2.a.params_mut());
        p.extend(self.res2.b.params_mut());
        p.extend(self.widen2.conv.params_mut());
        p.extend(self.res3.a.params_mut());
        p.extend(self.res3.b.params_mut());
        p
    }
}

/// Parallel-path style: three mixed-kernel blocks.
#[derive(Debug, Clone)]
pub struct InceptionSmall {
    pub stem: ConvRelu,
    pub b1: InceptionBlock,
    pub b2: InceptionBlock,
    pub b3: InceptionBlock,
    cache: Option<InceptionCaches>,
}

#[derive(Debug, Clone)]
struct InceptionCaches {
    stem: ConvReluCache,
    pool1: PoolCache,
    b1: InceptionCache,
    pool2: PoolCache,
    b2: InceptionCache,
    pool3: PoolCache,
    b3: InceptionCache,
    a_hw: (usize, usize),
}

impl InceptionSmall {
    fn new(rng: &mut impl Rng) -> Self {
        let stem = ConvRelu::new(rng, "stem", 3, 16, 3, 1);
        let b1 = InceptionBlock::new(rng, "b1", 16, 8, 16, 8); // -> 32
        let b2 = InceptionBlock::new(rng, "b2", 32, 12, 24, 12); // -> 48
        let b3 = InceptionBlock::new(rng, "b3", 48, 12, 24, 12); // -> 48
        debug_assert_eq!(b3.out_channels(), BackboneFamily::InceptionV3Class.feature_dim());
        InceptionSmall { stem, b1, b2, b3, cache: None }
    }

    fn forward_explain(&self, x: &Array4<f64>) -> (Array2<f64>, Array4<f64>) {
        let y = self.stem.forward(x, None);
        let y = pool_forward(&y, None);
        let y = self.b1.forward(&y, None);
        let y = pool_forward(&y, None);
        let y = self.b2.forward(&y, None);
        let y = pool_forward(&y, None);
        let a = self.b3.forward(&y, None);
        (gap(&a), a)
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let mut stem = None;
        let mut pool1 = None;
        let mut b1 = None;
        let mut pool2 = None;
        let mut b2 = None;
        let mut pool3 = None;
        let mut b3 = None;
        let y = self.stem.forward(x, Some(&mut stem));
        let y = pool_forward(&y, Some(&mut pool1));
        let y = self.b1.forward(&y, Some(&mut b1));
        let y = pool_forward(&y, Some(&mut pool2));
        let y = self.b2.forward(&y, Some(&mut b2));
        let y = pool_forward(&y, Some(&mut pool3));
        let a = self.b3.forward(&y, Some(&mut b3));
        let (_, _, h, w) = a.dim();
        self.cache = Some(InceptionCaches {
            stem: stem.unwrap(),
            pool1: pool1.unwrap(),
            b1: b1.unwrap(),
            pool2: pool2.unwrap(),
            b2: b2.unwrap(),
            pool3: pool3.unwrap(),
            b3: b3.unwrap(),
            a_hw: (h, w),
        });
        gap(&a)
    }

    fn backward(&mut self, dfeat: &Array2<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("forward_train before backward");
        let da = gap_backward(dfeat, cache.a_hw);
        let d = self.b3.backward(&cache.b3, &da);
        let d = maxpool2_backward(&d, &cache.pool3.arg, cache.pool3.in_hw);
        let d = self.b2.backward(&cache.b2, &d);
        let d = maxpool2_backward(&d, &cache.pool2.arg, cache.pool2.in_hw);
        let d = self.b1.backward(&cache.b1, &d);
        let d = maxpool2_backward(&d, &cache.pool1.arg, cache.pool1.in_hw);
        self.stem.backward(&cache.stem, &d)
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        p.extend(self.stem.conv.params());
        for b in [&self.b1, &self.b2, &self.b3] {
            p.extend(b.p1.params());
            p.extend(b.p3.params());
            p.extend(b.pp.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        p.extend(self.stem.conv.params_mut());
        for b in [&mut self.b1, &mut self.b2, &mut self.b3] {
            p.extend(b.p1.params_mut());
            p.extend(b.p3.params_mut());
            p.extend(b.pp.params_mut());
        }
        p
    }
}

/// Densely connected style: growth blocks with 1x1 transitions.
#[derive(Debug, Clone)]
pub struct DenseNetSmall {
    pub stem: ConvRelu,
    pub db1: DenseBlock,
    pub trans1: ConvRelu,
    pub db2: DenseBlock,
    pub trans2: ConvRelu,
    pub db3: DenseBlock,
    cache: Option<DenseNetCaches>,
}

#[derive(Debug, Clone)]
struct DenseNetCaches {
    stem: ConvReluCache,
    pool1: PoolCache,
    db1: DenseBlockCache,
    trans1: ConvReluCache,
    pool2: PoolCache,
    db2: DenseBlockCache,
    trans2: ConvReluCache,
    pool3: PoolCache,
    db3: DenseBlockCache,
    a_hw: (usize, usize),
}

impl DenseNetSmall {
    fn new(rng: &mut impl Rng) -> Self {
        let stem = ConvRelu::new(rng, "stem", 3, 16, 3, 1);
        let db1 = DenseBlock::new(rng, "db1", 16, 8); // -> 32
        let trans1 = ConvRelu::new(rng, "trans1", 32, 16, 1, 0);
        let db2 = DenseBlock::new(rng, "db2", 16, 8); // -> 32
        let trans2 = ConvRelu::new(rng, "trans2", 32, 24, 1, 0);
        let db3 = DenseBlock::new(rng, "db3", 24, 10); // -> 44
        debug_assert_eq!(db3.out_channels(), BackboneFamily::Densenet121Class.feature_dim());
        DenseNetSmall { stem, db1, trans1, db2, trans2, db3, cache: None }
    }

    fn forward_explain(&self, x: &Array4<f64>) -> (Array2<f64>, Array4<f64>) {
        let y = self.stem.forward(x, None);
        let y = pool_forward(&y, None);
        let y = self.db1.forward(&y, None);
        let y = self.trans1.forward(&y, None);
        let y = pool_forward(&y, None);
        let y = self.db2.forward(&y, None);
        let y = self.trans2.forward(&y, None);
        let y = pool_forward(&y, None);
        let a = self.db3.forward(&y, None);
        (gap(&a), a)
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let mut stem = None;
        let mut pool1 = None;
        let mut db1 = None;
        let mut trans1 = None;
        let mut pool2 = None;
        let mut db2 = None;
        let mut trans2 = None;
        let mut pool3 = None;
        let mut db3 = None;
        let y = self.stem.forward(x, Some(&mut stem));
        let y = pool_forward(&y, Some(&mut pool1));
        let y = self.db1.forward(&y, Some(&mut db1));
        let y = self.trans1.forward(&y, Some(&mut trans1));
        let y = pool_forward(&y, Some(&mut pool2));
        let y = self.db2.forward(&y, Some(&mut db2));
        let y = self.trans2.forward(&y, Some(&mut trans2));
        let y = pool_forward(&y, Some(&mut pool3));
        let a = self.db3.forward(&y, Some(&mut db3));
        let (_, _, h, w) = a.dim();
        self.cache = Some(DenseNetCaches {
            stem: stem.unwrap(),
            pool1: pool1.unwrap(),
            db1: db1.unwrap(),
            trans1: trans1.unwrap(),
            pool2: pool2.unwrap(),
            db2: db2.unwrap(),
            trans2: trans2.unwrap(),
            pool3: pool3.unwrap(),
            db3: db3.unwrap(),
            a_hw: (h, w),
        });
        gap(&a)
    }

    fn backward(&mut self, dfeat: &Array2<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("forward_train before backward");
        let da = gap_backward(dfeat, cache.a_hw);
        let d = self.db3.backward(&cache.db3, &da);
        let d = maxpool2_backward(&d, &cache.pool3.arg, cache.pool3.in_hw);
        let d = self.trans2.backward(&cache.trans2, &d);
        let d = self.db2.backward(&cache.db2, &d);
        let d = maxpool2_backward(&d, &cache.pool2.arg, cache.pool2.in_hw);
        let d = self.trans1.backward(&cache.trans1, &d);
        let d = self.db1.backward(&cache.db1, &d);
        let d = maxpool2_backward(&d, &cache.pool1.arg, cache.pool1.in_hw);
        self.stem.backward(&cache.stem, &d)
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        p.extend(self.stem.conv.params());
        p.extend(self.db1.l1.params());
        p.extend(self.db1.l2.params());
        p.extend(self.trans1.conv.params());
        p.extend(self.db2.l1.params());
        p.extend(self.db2.l2.params());
        p.extend(self.trans2.conv.params());
        p.extend(self.db3.l1.params());
        p.extend(self.db3.l2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        p.extend(self.stem.conv.params_mut());
        p.extend(self.db1.l1.params_mut());
        p.extend(self.db1.l2.params_mut());
        p.extend(self.trans1.conv.params_mut());
        p.extend(self.db2.l1.params_mut());
        p.extend(self.db2.l2.params_mut());
        p.extend(self.trans2.conv.params_mut());
        p.extend(self.db3.l1.params_mut());
        p.extend(self.db3.l2.params_mut());
        p
    }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// A backbone of any family. Immutable in eval mode; training callers hold
/// exclusive access.
#[derive(Debug, Clone)]
pub enum Backbone {
    ResNet(ResNetSmall),
    Inception(InceptionSmall),
    DenseNet(DenseNetSmall),
}

impl Backbone {
    pub fn new(family: BackboneFamily, rng: &mut impl Rng) -> Backbone {
        match family {
            BackboneFamily::Resnet50Class => Backbone::ResNet(ResNetSmall::new(rng)),
            BackboneFamily::InceptionV3Class => Backbone::Inception(InceptionSmall::new(rng)),
            BackboneFamily::Densenet121Class => Backbone::DenseNet(DenseNetSmall::new(rng)),
        }
    }

    pub fn family(&self) -> BackboneFamily {
        match self {
            Backbone::ResNet(_) => BackboneFamily::Resnet50Class,
            Backbone::Inception(_) => BackboneFamily::InceptionV3Class,
            Backbone::DenseNet(_) => BackboneFamily::Densenet121Class,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.family().feature_dim()
    }

    /// Eval-mode feature extraction.
    pub fn forward(&self, x: &Array4<f64>) -> Array2<f64> {
        self.forward_explain(x).0
    }

    /// Eval-mode forward that also returns the final convolutional
    /// activation (N, C, h, w), the target layer for class-activation maps.
    pub fn forward_explain(&self, x: &Array4<f64>) -> (Array2<f64>, Array4<f64>) {
        match self {
            Backbone::ResNet(n) => n.forward_explain(x),
            Backbone::Inception(n) => n.forward_explain(x),
            Backbone::DenseNet(n) => n.forward_explain(x),
        }
    }

    /// Training forward; caches intermediates for one backward call.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Array2<f64> {
        match self {
            Backbone::ResNet(n) => n.forward_train(x),
            Backbone::Inception(n) => n.forward_train(x),
            Backbone::DenseNet(n) => n.forward_train(x),
        }
    }

    /// Backprop from feature gradients; accumulates parameter gradients and
    /// returns input gradients. Consumes the cached forward state.
    pub fn backward(&mut self, dfeat: &Array2<f64>) -> Array4<f64> {
        match self {
            Backbone::ResNet(n) => n.backward(dfeat),
            Backbone::Inception(n) => n.backward(dfeat),
            Backbone::DenseNet(n) => n.backward(dfeat),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Backbone::ResNet(n) => n.params(),
            Backbone::Inception(n) => n.params(),
            Backbone::DenseNet(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Backbone::ResNet(n) => n.params_mut(),
            Backbone::Inception(n) => n.params_mut(),
            Backbone::DenseNet(n) => n.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

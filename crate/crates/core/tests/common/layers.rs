//! Every layer kernel wrapped as a function of one tensor argument, for the
//! finite-difference suite.

use super::*;

fn cast<S: Scalar>(t: &Tensor) -> Tensor<S> {
    t.cast::<S>()
}

fn cast_vec<S: Scalar>(v: &[f32]) -> Vec<S> {
    v.iter().map(|&x| S::cast_from(x as f64)).collect()
}

/// Convolution as a function of its input, kernel or bias.
pub struct ConvWrt {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub pad: usize,
    pub wrt: Wrt,
}

#[derive(Clone, Copy, Debug)]
pub enum Wrt {
    Input,
    Weight,
    Bias,
}

impl ConvWrt {
    fn parts<S: Scalar>(&self, x: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Vec<S>) {
        match self.wrt {
            Wrt::Input => (x.clone(), cast(&self.kernel), cast_vec(&self.bias)),
            Wrt::Weight => (cast(&self.input), x.clone(), cast_vec(&self.bias)),
            Wrt::Bias => (cast(&self.input), cast(&self.kernel), x.data().to_vec()),
        }
    }
}

impl Differentiable for ConvWrt {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (i, k, b) = self.parts(x);
        conv2d(&i, &k, &b, self.stride, self.pad)
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let (i, k, _) = self.parts(x);
        let grads = conv2d_backward(&i, &k, self.stride, self.pad, g, true)?;
        Ok(match self.wrt {
            Wrt::Input => grads.input.expect("input gradient requested"),
            Wrt::Weight => grads.kernel,
            Wrt::Bias => Tensor::from_vec(x.shape(), grads.bias)?,
        })
    }
}

pub struct Relu;

impl Differentiable for Relu {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(relu(x))
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        Ok(relu_backward(x, g))
    }
}

pub struct MaxPool;

impl Differentiable for MaxPool {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(maxpool2(x)?.0)
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        maxpool2_backward(g, &maxpool2(x)?.1)
    }
}

/// Unpooling of `x` at the positions recorded while pooling `source`.
pub struct Unpool {
    pub source: Tensor,
}

impl Differentiable for Unpool {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s = self.source.shape();
        unpool2(x, &maxpool2(&self.source)?.1, (s.h, s.w))
    }
    fn vjp(&self, _x: &Tensor, g: &Tensor) -> Result<Tensor> {
        unpool2_backward(g, &maxpool2(&self.source)?.1)
    }
}

pub struct AvgPool;

impl Differentiable for AvgPool {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        avgpool2(x)
    }
    fn vjp(&self, _x: &Tensor, g: &Tensor) -> Result<Tensor> {
        Ok(avgpool2_backward(g))
    }
}

/// Transposed-convolution upsampling as a function of input or kernel.
pub struct UpsampleWrt {
    pub input: Tensor,
    pub kernel: Tensor,
    pub factor: usize,
    pub wrt_kernel: bool,
}

impl Differentiable for UpsampleWrt {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if self.wrt_kernel {
            upsample_tconv(&cast(&self.input), x, self.factor)
        } else {
            upsample_tconv(x, &cast(&self.kernel), self.factor)
        }
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        Ok(if self.wrt_kernel {
            upsample_tconv_backward(&self.input, x, self.factor, g)?.kernel
        } else {
            upsample_tconv_backward(x, &self.kernel, self.factor, g)?.input
        })
    }
}

/// `concat(x, other)` along channels.
pub struct Concat {
    pub other: Tensor,
}

impl Differentiable for Concat {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        concat_channels(&[x, &cast(&self.other)])
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let c = x.shape().c;
        Ok(split_channels(g, &[c, self.other.shape().c])?.swap_remove(0))
    }
}

/// `x + other`, and `x + x` through both operands when `other` is `None`.
pub struct Add {
    pub other: Option<Tensor>,
}

impl Differentiable for Add {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match &self.other {
            Some(o) => add_elementwise(x, &cast(o)),
            None => add_elementwise(x, x),
        }
    }
    fn vjp(&self, _x: &Tensor, g: &Tensor) -> Result<Tensor> {
        Ok(match self.other {
            Some(_) => g.clone(),
            None => g.map(|v| 2.0 * v),
        })
    }
}

pub struct Softmax;

impl Differentiable for Softmax {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        softmax_channels(x)
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        Ok(softmax_backward(&softmax_channels(x)?, g))
    }
}

/// Training-mode batch normalization as a function of input, gamma or beta.
pub struct BatchNormWrt {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub wrt: Wrt,
}

impl BatchNormWrt {
    fn parts<S: Scalar>(&self, x: &Tensor<S>) -> (Tensor<S>, Vec<S>, Vec<S>) {
        match self.wrt {
            Wrt::Input => (x.clone(), cast_vec(&self.gamma), cast_vec(&self.beta)),
            Wrt::Weight => (cast(&self.input), x.data().to_vec(), cast_vec(&self.beta)),
            Wrt::Bias => (cast(&self.input), cast_vec(&self.gamma), x.data().to_vec()),
        }
    }
}

impl Differentiable for BatchNormWrt {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (i, g, b) = self.parts(x);
        let mut stats = RunningStats::new(i.shape().c);
        Ok(batchnorm(&i, &g, &b, Mode::Train, &mut stats)?.0)
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let (i, gamma, beta) = self.parts(x);
        let mut stats = RunningStats::new(i.shape().c);
        let cache = batchnorm(&i, &gamma, &beta, Mode::Train, &mut stats)?.1.expect("train mode caches");
        let grads = batchnorm_backward(&cache, &gamma, g);
        Ok(match self.wrt {
            Wrt::Input => grads.input,
            Wrt::Weight => Tensor::from_vec(x.shape(), grads.gamma)?,
            Wrt::Bias => Tensor::from_vec(x.shape(), grads.beta)?,
        })
    }
}

/// Training-mode dropout with a mask fixed by `seed`.
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

impl Differentiable for Dropout {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(dropout(x, self.rate, Mode::Train, &mut rng)?.0)
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mask = dropout(x, self.rate, Mode::Train, &mut rng)?.1;
        Ok(dropout_backward(g, mask.as_ref()))
    }
}

pub struct SoftmaxXent {
    pub labels: Vec<LabelMap>,
    pub ignore: Option<u8>,
}

impl Differentiable for SoftmaxXent {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let refs: Vec<&LabelMap> = self.labels.iter().collect();
        Ok(scalar(loss_softmax_xent(x, &refs, self.ignore)?.0))
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let refs: Vec<&LabelMap> = self.labels.iter().collect();
        let grad = loss_softmax_xent(x, &refs, self.ignore)?.1;
        let s = g.data()[0];
        Ok(grad.map(|v| v * s))
    }
}

pub struct WeightedL2 {
    pub target: Tensor,
    pub weights: Tensor,
}

impl Differentiable for WeightedL2 {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(scalar(loss_weighted_l2(x, &cast(&self.target), &cast(&self.weights))?.0))
    }
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let grad = loss_weighted_l2(x, &self.target, &self.weights)?.1;
        let s = g.data()[0];
        Ok(grad.map(|v| v * s))
    }
}

/// Runs every layer check on inputs no larger than (2, 4, 16, 16).
pub fn layer_suite() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    let mut push = |name: &str, r: GradCheckReport| out.push((name.to_string(), r));
    let x = random(Shape::new(2, 3, 8, 8), 1);
    let k = random(Shape::new(4, 3, 3, 3), 2);
    let b = vec![0.1, -0.2, 0.3, 0.05];
    for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
        for wrt in [Wrt::Input, Wrt::Weight, Wrt::Bias] {
            let op = ConvWrt {
                input: x.clone(),
                kernel: k.clone(),
                bias: b.clone(),
                stride,
                pad,
                wrt,
            };
            let arg = match wrt {
                Wrt::Input => x.clone(),
                Wrt::Weight => k.clone(),
                Wrt::Bias => Tensor::from_vec(Shape::new(1, 1, 1, 4), b.clone())?,
            };
            push(&format!("conv3x3 s{stride} p{pad} wrt {wrt:?}"), check(&op, &arg)?);
        }
    }
    let k1 = random(Shape::new(2, 3, 1, 1), 3);
    let op = ConvWrt {
        input: x.clone(),
        kernel: k1.clone(),
        bias: vec![0.0, 0.5],
        stride: 1,
        pad: 0,
        wrt: Wrt::Input,
    };
    push("conv1x1 wrt Input", check(&op, &x)?);
    push("relu", check(&Relu, &away_from_zero(Shape::new(2, 4, 16, 16), 4, 0.01))?);
    push("maxpool", check(&MaxPool, &distinct(Shape::new(2, 4, 16, 16), 5, 0.01))?);
    let source = distinct(Shape::new(2, 4, 16, 16), 6, 0.01);
    push("unpool", check(&Unpool { source }, &random(Shape::new(2, 4, 8, 8), 7))?);
    push("avgpool", check(&AvgPool, &random(Shape::new(2, 4, 16, 16), 8))?);
    for factor in [2, 4] {
        let input = random(Shape::new(2, 2, 4, 4), 9);
        let kernel = random(Shape::new(2, 1, upsample_kernel_size(factor), upsample_kernel_size(factor)), 10);
        for wrt_kernel in [false, true] {
            let op = UpsampleWrt {
                input: input.clone(),
                kernel: kernel.clone(),
                factor,
                wrt_kernel,
            };
            let arg = if wrt_kernel { kernel.clone() } else { input.clone() };
            let what = if wrt_kernel { "kernel" } else { "input" };
            push(&format!("upsample x{factor} wrt {what}"), check(&op, &arg)?);
        }
    }
    let other = random(Shape::new(2, 1, 16, 16), 11);
    push("concat", check(&Concat { other: other.clone() }, &random(Shape::new(2, 3, 16, 16), 12))?);
    push("add", check(&Add { other: Some(random(Shape::new(2, 4, 16, 16), 13)) }, &random(Shape::new(2, 4, 16, 16), 14))?);
    push("add shared operand", check(&Add { other: None }, &random(Shape::new(2, 4, 16, 16), 15))?);
    push("softmax", check(&Softmax, &random(Shape::new(2, 4, 16, 16), 16))?);
    let bx = random(Shape::new(2, 4, 8, 8), 17);
    let gamma = vec![1.0, 0.5, -0.7, 1.3];
    let beta = vec![0.0, 0.2, -0.1, 0.4];
    for wrt in [Wrt::Input, Wrt::Weight, Wrt::Bias] {
        let op = BatchNormWrt {
            input: bx.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            wrt,
        };
        let arg = match wrt {
            Wrt::Input => bx.clone(),
            Wrt::Weight => Tensor::from_vec(Shape::new(1, 1, 1, 4), gamma.clone())?,
            Wrt::Bias => Tensor::from_vec(Shape::new(1, 1, 1, 4), beta.clone())?,
        };
        let name = match wrt {
            Wrt::Input => "batchnorm wrt input",
            Wrt::Weight => "batchnorm wrt gamma",
            Wrt::Bias => "batchnorm wrt beta",
        };
        push(name, check(&op, &arg)?);
    }
    push("dropout", check(&Dropout { rate: 0.3, seed: 18 }, &random(Shape::new(2, 4, 16, 16), 19))?);
    let labels = vec![random_labels(16, 16, 4, 20, Some(255)), random_labels(16, 16, 4, 21, Some(255))];
    push(
        "softmax cross-entropy",
        check(&SoftmaxXent { labels, ignore: Some(255) }, &random(Shape::new(2, 4, 16, 16), 22))?,
    );
    let target = random(Shape::new(2, 1, 16, 16), 23).map(|v| v.abs());
    let weights = random(Shape::new(2, 1, 16, 16), 24).map(|v| 0.5 + v.abs());
    push("weighted l2", check(&WeightedL2 { target, weights }, &random(Shape::new(2, 1, 16, 16), 25))?);
    Ok(out)
}

use std::fmt;

/// Differentiable primitives recorded by the tape. Everything else in the
/// workspace is composed from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Conv2d,
    MaxPool2d,
    GlobalAvgPool,
    Relu,
    Sigmoid,
    Softmax,
    LogSoftmax,
    Sum,
    Mean,
    Reshape,
    Concat,
    Slice,
    Sign,
    Clamp,
    GatherRows,
    ScatterRows,
}

const ALL: [Primitive; 21] = [
    Primitive::Add,
    Primitive::Sub,
    Primitive::Mul,
    Primitive::Scale,
    Primitive::MatMul,
    Primitive::Conv2d,
    Primitive::MaxPool2d,
    Primitive::GlobalAvgPool,
    Primitive::Relu,
    Primitive::Sigmoid,
    Primitive::Softmax,
    Primitive::LogSoftmax,
    Primitive::Sum,
    Primitive::Mean,
    Primitive::Reshape,
    Primitive::Concat,
    Primitive::Slice,
    Primitive::Sign,
    Primitive::Clamp,
    Primitive::GatherRows,
    Primitive::ScatterRows,
];

/// The full catalog of primitives, each with a forward and a backward rule.
pub fn primitive_set() -> &'static [Primitive] {
    &ALL
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d => "conv2d",
            Primitive::MaxPool2d => "max_pool2d",
            Primitive::GlobalAvgPool => "global_avg_pool",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Reshape => "reshape",
            Primitive::Concat => "concat",
            Primitive::Slice => "slice",
            Primitive::Sign => "sign",
            Primitive::Clamp => "clamp",
            Primitive::GatherRows => "gather_rows",
            Primitive::ScatterRows => "scatter_rows",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ALL.iter().copied().find(|p| p.name() == name)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

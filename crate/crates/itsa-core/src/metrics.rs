/// One logged value from a training or evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub epoch: usize,
    pub split: String,
    pub name: String,
    pub value: f64,
}

impl Metric {
    pub fn new(epoch: usize, split: &str, name: &str, value: f64) -> Self {
        Self { epoch, split: split.to_string(), name: name.to_string(), value }
    }
}

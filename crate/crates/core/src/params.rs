//! Named parameter views shared by the optimizer, checkpoints and freezing.

/// Which part of the model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Tokenizer,
    PosEmb,
    Cls,
    Layer(usize),
    FinalNorm,
    Gate,
    Head(usize),
}

impl ParamGroup {
    /// Frozen parameters never receive gradients or updates. Layers below
    /// `freeze_below` are frozen, and so is everything feeding them
    /// (tokenizer, learned positions, class token). The final norm counts as
    /// part of the last layer. Heads and the gate always train.
    pub fn is_frozen(self, freeze_below: Option<usize>, layers: usize) -> bool {
        let Some(f) = freeze_below else {
            return false;
        };
        match self {
            ParamGroup::Tokenizer | ParamGroup::PosEmb | ParamGroup::Cls => f > 0,
            ParamGroup::Layer(l) => l < f,
            ParamGroup::FinalNorm => f >= layers,
            ParamGroup::Gate | ParamGroup::Head(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamId {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    /// Matrices get weight decay; vectors (biases, norms, gate) do not.
    pub decay: bool,
}

impl ParamId {
    pub fn new(name: impl Into<String>, group: ParamGroup, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            group,
            shape: shape.to_vec(),
            decay: shape.len() >= 2,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

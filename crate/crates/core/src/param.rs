//! Content-addressed parameter blocks.
//!
//! A [`ParamBlock`] is the unit of sharing and freezing. Its id hashes the
//! tensor shape, the raw values and the block's [`Origin`], so two scenarios
//! that happen to learn identical values still keep separate provenance.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::hash::{Hash256, Hasher};
use crate::tensor::Tensor;

/// Content address of a [`ParamBlock`].
pub type BlockId = Hash256;

/// Which part of the pool produced a block.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Meta,
    Scenario(String),
}

impl Scope {
    pub fn scenario(id: impl Into<String>) -> Self {
        Scope::Scenario(id.into())
    }

    /// `"meta"` or the scenario id.
    pub fn name(&self) -> &str {
        match self {
            Scope::Meta => "meta",
            Scope::Scenario(s) => s,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Provenance of a block: who created it, in which generation, and the slot
/// it was created for (e.g. `traj.1.w2`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub scope: Scope,
    pub generation: u32,
    pub label: String,
}

impl Origin {
    pub fn new(scope: Scope, generation: u32, label: impl Into<String>) -> Self {
        Origin {
            scope,
            generation,
            label: label.into(),
        }
    }

    pub fn meta(label: impl Into<String>) -> Self {
        Origin::new(Scope::Meta, 0, label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parameter block {0} is frozen")]
pub struct FrozenError(pub BlockId);

#[derive(Debug, Clone)]
pub struct ParamBlock {
    id: BlockId,
    tensor: Tensor,
    trainable: bool,
    origin: Origin,
}

impl ParamBlock {
    pub fn new(tensor: Tensor, origin: Origin, trainable: bool) -> Self {
        let id = block_id(&tensor, &origin);
        ParamBlock {
            id,
            tensor,
            trainable,
            origin,
        }
    }

    pub fn id(&self) -> BlockId {
        self.id
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    /// Number of scalar parameters.
    pub fn size(&self) -> usize {
        self.tensor.len()
    }

    /// A read-only reference to the same content. The id is unchanged.
    pub fn frozen(&self) -> ParamBlock {
        ParamBlock {
            trainable: false,
            ..self.clone()
        }
    }

    /// A trainable replica with new provenance (and therefore a new id).
    pub fn tuned_copy(&self, origin: Origin) -> ParamBlock {
        ParamBlock::new(self.tensor.clone(), origin, true)
    }

    /// Mutable access to the values of a trainable block.
    ///
    /// The id goes stale until [`ParamBlock::refresh_id`] is called.
    pub fn values_mut(&mut self) -> Result<&mut [f32], FrozenError> {
        if !self.trainable {
            return Err(FrozenError(self.id));
        }
        Ok(self.tensor.data_mut())
    }

    /// Recomputes the content address after in-place updates.
    pub fn refresh_id(&mut self) {
        self.id = block_id(&self.tensor, &self.origin);
    }

    /// True when the stored id matches the current content.
    pub fn verify(&self) -> bool {
        self.id == block_id(&self.tensor, &self.origin)
    }
}

impl PartialEq for ParamBlock {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.trainable == other.trainable && self.tensor == other.tensor
    }
}

/// Content address for a tensor with the given provenance.
pub fn block_id(tensor: &Tensor, origin: &Origin) -> BlockId {
    let mut h = Hasher::new("evopath.block.v1");
    h.u64(tensor.shape().len() as u64);
    for &d in tensor.shape() {
        h.u64(d as u64);
    }
    h.f32s(tensor.data());
    match &origin.scope {
        Scope::Meta => h.u64(0),
        Scope::Scenario(s) => h.u64(1).str(s),
    };
    h.u64(u64::from(origin.generation)).str(&origin.label);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlobError {
    #[error("blob shorter than its 8-byte length prefix")]
    MissingHeader,
    #[error("blob declares {declared} values but carries {actual} bytes of payload")]
    Truncated { declared: u64, actual: usize },
}

/// Serializes values as an 8-byte little-endian element count followed by
/// little-endian `f32`s.
pub fn encode_blob(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_blob(bytes: &[u8]) -> Result<Vec<f32>, BlobError> {
    let (head, body) = bytes.split_at_checked(8).ok_or(BlobError::MissingHeader)?;
    let declared = u64::from_le_bytes(head.try_into().expect("8 bytes"));
    if (body.len() as u64) != declared.saturating_mul(4) {
        return Err(BlobError::Truncated {
            declared,
            actual: body.len(),
        });
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

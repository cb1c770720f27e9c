//! Published per-pronoun agree/disagree counts (250 samples per family),
//! used by the table-emulating mock backend.

use crate::domain::{PipelineVariant, PronounFamily};

pub const SAMPLES_PER_FAMILY: u32 = 250;

/// `(agree, disagree)` per family in [`PronounFamily::ALL`] order.
pub type FamilyCounts = [(u32, u32); 6];

pub const THREE_AGENT: FamilyCounts = [(79, 171), (100, 150), (248, 2), (212, 38), (228, 22), (245, 5)];
pub const TWO_AGENT: FamilyCounts = [(194, 56), (162, 88), (250, 0), (226, 24), (238, 12), (243, 7)];
pub const SINGLE_MODEL: FamilyCounts = [(149, 101), (186, 64), (250, 0), (199, 51), (224, 26), (246, 4)];

pub fn counts_for(variant: PipelineVariant) -> &'static FamilyCounts {
    match variant {
        PipelineVariant::ThreeAgent => &THREE_AGENT,
        PipelineVariant::TwoAgent => &TWO_AGENT,
        PipelineVariant::SingleModel => &SINGLE_MODEL,
    }
}

/// Agree count for `family` out of [`SAMPLES_PER_FAMILY`].
pub fn agree_count(variant: PipelineVariant, family: PronounFamily) -> u32 {
    counts_for(variant)[family.index()].0
}

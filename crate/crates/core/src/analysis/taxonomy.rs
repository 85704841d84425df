//! Nearest standard business model by symmetric set difference.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::component::Component;

pub const DEFAULT_TAXONOMY_THRESHOLD: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Taxonomy {
    Retail,
    RetailDiversified,
    Investment,
    Wholesale,
}

impl Taxonomy {
    /// Also the tie-break order.
    pub const ALL: [Taxonomy; 4] =
        [Taxonomy::Retail, Taxonomy::RetailDiversified, Taxonomy::Investment, Taxonomy::Wholesale];

    pub fn name(self) -> &'static str {
        match self {
            Taxonomy::Retail => "retail",
            Taxonomy::RetailDiversified => "retail diversified",
            Taxonomy::Investment => "investment",
            Taxonomy::Wholesale => "wholesale",
        }
    }

    pub fn components(self) -> BTreeSet<Component> {
        use Component::*;
        let retail = [CustomerLoans, CustomerDeposits, Equity];
        let investment = [DerivativeExposures, Securities, ShortTermFunding, LongTermFunding];
        match self {
            Taxonomy::Retail => retail.into(),
            Taxonomy::RetailDiversified => retail.into_iter().chain([ShortTermFunding, LongTermFunding]).collect(),
            Taxonomy::Investment => investment.into(),
            Taxonomy::Wholesale => investment.into_iter().chain([InterbankLending, InterbankBorrowing]).collect(),
        }
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyMatch {
    pub nearest: Taxonomy,
    pub distance: usize,
    /// `nearest` when within the threshold, otherwise `None` (non-standard).
    pub label: Option<Taxonomy>,
}

impl TaxonomyMatch {
    pub fn label_name(&self) -> &'static str {
        self.label.map_or("non-standard", Taxonomy::name)
    }
}

pub fn match_taxonomy(characterizing: &BTreeSet<Component>, threshold: usize) -> TaxonomyMatch {
    let (nearest, distance) = Taxonomy::ALL
        .iter()
        .map(|&t| (t, t.components().symmetric_difference(characterizing).count()))
        .min_by_key(|&(_, d)| d)
        .expect("non-empty taxonomy");
    TaxonomyMatch { nearest, distance, label: (distance <= threshold).then_some(nearest) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Component::*;

    #[test]
    fn exact_retail() {
        let m = match_taxonomy(&[CustomerLoans, CustomerDeposits, Equity].into(), 2);
        assert_eq!((m.nearest, m.distance, m.label), (Taxonomy::Retail, 0, Some(Taxonomy::Retail)));
    }

    #[test]
    fn empty_set_is_non_standard() {
        let m = match_taxonomy(&BTreeSet::new(), 2);
        assert!(m.distance >= 3);
        assert_eq!(m.label, None);
        assert_eq!(m.label_name(), "non-standard");
        // Retail is the smallest canonical set.
        assert_eq!(m.nearest, Taxonomy::Retail);
    }

    #[test]
    fn interbank_pair_is_nearest_wholesale() {
        let set: BTreeSet<_> = [InterbankLending, InterbankBorrowing].into();
        let distances: Vec<usize> =
            Taxonomy::ALL.iter().map(|t| t.components().symmetric_difference(&set).count()).collect();
        assert_eq!(distances, vec![5, 7, 6, 4]);
        let m = match_taxonomy(&set, 2);
        assert_eq!((m.nearest, m.distance, m.label), (Taxonomy::Wholesale, 4, None));
        assert_eq!(match_taxonomy(&set, 4).label, Some(Taxonomy::Wholesale));
    }

    #[test]
    fn tie_goes_to_earlier_profile() {
        let set: BTreeSet<_> = [CustomerLoans, CustomerDeposits, Equity, Securities, ShortTermFunding].into();
        let d = |t: Taxonomy| t.components().symmetric_difference(&set).count();
        assert_eq!((d(Taxonomy::Retail), d(Taxonomy::RetailDiversified)), (2, 2));
        assert_eq!(match_taxonomy(&set, 2).nearest, Taxonomy::Retail);
    }
}

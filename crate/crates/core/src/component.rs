//! The nine balance-sheet portfolio components used as explanatory variables.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const N_COMPONENTS: usize = 9;

/// One portfolio component, expressed as a ratio to total assets.
///
/// The first four are asset-side positions, the remaining five liability-side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    CustomerLoans,
    InterbankLending,
    DerivativeExposures,
    Securities,
    CustomerDeposits,
    InterbankBorrowing,
    ShortTermFunding,
    LongTermFunding,
    Equity,
}

impl Component {
    pub const ALL: [Component; N_COMPONENTS] = [
        Component::CustomerLoans,
        Component::InterbankLending,
        Component::DerivativeExposures,
        Component::Securities,
        Component::CustomerDeposits,
        Component::InterbankBorrowing,
        Component::ShortTermFunding,
        Component::LongTermFunding,
        Component::Equity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Component> {
        Self::ALL.get(i).copied()
    }

    /// Default CSV column name.
    pub fn column(self) -> &'static str {
        match self {
            Component::CustomerLoans => "customer_loans",
            Component::InterbankLending => "interbank_lending",
            Component::DerivativeExposures => "derivative_exposures",
            Component::Securities => "securities",
            Component::CustomerDeposits => "customer_deposits",
            Component::InterbankBorrowing => "interbank_borrowing",
            Component::ShortTermFunding => "short_term_funding",
            Component::LongTermFunding => "long_term_funding",
            Component::Equity => "equity",
        }
    }

    /// Human-readable label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Component::CustomerLoans => "Customer loans",
            Component::InterbankLending => "Interbank lending",
            Component::DerivativeExposures => "Derivative exposures",
            Component::Securities => "Securities",
            Component::CustomerDeposits => "Customer deposits",
            Component::InterbankBorrowing => "Interbank borrowing",
            Component::ShortTermFunding => "Short-term funding",
            Component::LongTermFunding => "Long-term funding",
            Component::Equity => "Equity",
        }
    }

    pub fn from_column(name: &str) -> Option<Component> {
        Self::ALL.iter().copied().find(|c| c.column() == name)
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.column().to_string()).collect()
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

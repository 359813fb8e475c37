use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LedgerError;

/// The externally invocable transactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxType {
    CreateDO,
    CreateCO,
    CreateMO,
    CreateDS,
    CreateDSS,
    CreateCI,
    JoinCI,
    VerifyCI,
    CreateMod,
    RequestTC,
    ApproveTC,
    StartRound,
    UpdateTJ,
    FinishTC,
    FlagFraud,
}

impl TxType {
    pub const ALL: [TxType; 15] = [
        TxType::CreateDO,
        TxType::CreateCO,
        TxType::CreateMO,
        TxType::CreateDS,
        TxType::CreateDSS,
        TxType::CreateCI,
        TxType::JoinCI,
        TxType::VerifyCI,
        TxType::CreateMod,
        TxType::RequestTC,
        TxType::ApproveTC,
        TxType::StartRound,
        TxType::UpdateTJ,
        TxType::FinishTC,
        TxType::FlagFraud,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TxType::CreateDO => "CreateDO",
            TxType::CreateCO => "CreateCO",
            TxType::CreateMO => "CreateMO",
            TxType::CreateDS => "CreateDS",
            TxType::CreateDSS => "CreateDSS",
            TxType::CreateCI => "CreateCI",
            TxType::JoinCI => "JoinCI",
            TxType::VerifyCI => "VerifyCI",
            TxType::CreateMod => "CreateMod",
            TxType::RequestTC => "RequestTC",
            TxType::ApproveTC => "ApproveTC",
            TxType::StartRound => "StartRound",
            TxType::UpdateTJ => "UpdateTJ",
            TxType::FinishTC => "FinishTC",
            TxType::FlagFraud => "FlagFraud",
        }
    }

    /// Member-registration transactions are the only ones without a caller.
    pub fn creates_member(self) -> bool {
        matches!(self, TxType::CreateDO | TxType::CreateCO | TxType::CreateMO)
    }

    /// Accepted positional argument counts.
    ///
    /// | tx          | args                                              |
    /// |-------------|---------------------------------------------------|
    /// | Create{DO,CO,MO} | `[name, organization, how_many]`, all optional |
    /// | CreateDS    | `[m, n, sample_meta]`                             |
    /// | CreateDSS   | `[ds_id, index, rows]`                            |
    /// | CreateCI    | `[dss_id, co_id]`                                 |
    /// | JoinCI      | `[ci_id, hash, nonce]`                            |
    /// | VerifyCI    | `[ci_id, "true"\|"false"]`                        |
    /// | CreateMod   | `[model_type, model_url, training_method_json, model_hash]` |
    /// | RequestTC   | `[ds_id, mod_id]`                                 |
    /// | ApproveTC   | `[tc_id]`                                         |
    /// | StartRound  | `[tc_id]` or `[tc_id, model_url, model_hash]`     |
    /// | UpdateTJ    | `[tj_id, model_hash, nonce, enc_model_url]`       |
    /// | FinishTC    | `[tc_id]` or `[tc_id, model_url, model_hash]`     |
    /// | FlagFraud   | `[subject_id, evidence]`                          |
    pub fn arity(self) -> &'static [usize] {
        match self {
            TxType::CreateDO | TxType::CreateCO | TxType::CreateMO => &[0, 1, 2, 3],
            TxType::CreateDS | TxType::CreateDSS | TxType::JoinCI => &[3],
            TxType::CreateCI | TxType::VerifyCI | TxType::RequestTC | TxType::FlagFraud => &[2],
            TxType::CreateMod | TxType::UpdateTJ => &[4],
            TxType::ApproveTC => &[1],
            TxType::StartRound | TxType::FinishTC => &[1, 3],
        }
    }
}

impl fmt::Display for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TxType {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TxType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| LedgerError::UnknownTxType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionEnvelope {
    pub tx_id: String,
    pub tx_type: TxType,
    /// Pseudo-id of the invoking member; empty for member registration.
    pub caller: String,
    pub args: Vec<String>,
    /// Queue-entry time in milliseconds of simulation time.
    pub submit_time: u64,
}

impl TransactionEnvelope {
    pub fn new(
        tx_id: impl Into<String>,
        tx_type: TxType,
        caller: impl Into<String>,
        args: Vec<String>,
        submit_time: u64,
    ) -> Self {
        TransactionEnvelope {
            tx_id: tx_id.into(),
            tx_type,
            caller: caller.into(),
            args,
            submit_time,
        }
    }

    /// Builds an envelope from an untyped transaction name.
    pub fn parse(
        tx_id: impl Into<String>,
        tx_type: &str,
        caller: impl Into<String>,
        args: Vec<String>,
        submit_time: u64,
    ) -> Result<Self, LedgerError> {
        Ok(Self::new(tx_id, tx_type.parse()?, caller, args, submit_time))
    }

    pub fn check_well_formed(&self) -> Result<(), LedgerError> {
        let malformed = |why: String| Err(LedgerError::MalformedEnvelope(why));
        if self.tx_id.is_empty() {
            return malformed("empty tx_id".into());
        }
        if !self.tx_type.creates_member() && self.caller.is_empty() {
            return malformed(format!("{} requires a caller", self.tx_type));
        }
        if !self.tx_type.arity().contains(&self.args.len()) {
            return malformed(format!(
                "{} takes {:?} args, got {}",
                self.tx_type,
                self.tx_type.arity(),
                self.args.len()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_distinct_names_parse_back() {
        let mut names: Vec<_> = TxType::ALL.iter().map(|t| t.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 15);
        for t in TxType::ALL {
            assert_eq!(t.name().parse::<TxType>().unwrap(), t);
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert_eq!(
            TransactionEnvelope::parse("t", "Foo", "c", vec![], 0),
            Err(LedgerError::UnknownTxType("Foo".into()))
        );
    }

    #[test]
    fn arity_and_caller_are_checked() {
        let ok = TransactionEnvelope::new("t", TxType::CreateDO, "", vec!["h1".into()], 0);
        assert!(ok.check_well_formed().is_ok());
        let no_caller = TransactionEnvelope::new("t", TxType::ApproveTC, "", vec!["x".into()], 0);
        assert!(matches!(no_caller.check_well_formed(), Err(LedgerError::MalformedEnvelope(_))));
        let bad_args = TransactionEnvelope::new("t", TxType::ApproveTC, "c", vec![], 0);
        assert!(matches!(bad_args.check_well_formed(), Err(LedgerError::MalformedEnvelope(_))));
    }
}

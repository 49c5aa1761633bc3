use super::{Decision, FraudFlags, Institution, MarketError, PriceBook, Problem, Treatment};

/// All decisions an expert may take for one consumer.
///
/// Order is HCT before LCT, lower charge before higher; equal prices
/// collapse the charge choice.
pub fn legal_actions(institution: Institution, problem: Problem, prices: PriceBook) -> Vec<Decision> {
    let charges: &[u32] = if prices.is_degenerate() { &[prices.low][..] } else { &[prices.low, prices.high][..] };
    let mut out = Vec::with_capacity(4);
    for treatment in Treatment::ALL {
        match institution {
            Institution::NoInstitution => {
                out.extend(charges.iter().map(|&c| Decision::new(treatment, c)));
            }
            Institution::Verifiability => {
                let charge = match treatment {
                    Treatment::Hct => prices.high,
                    Treatment::Lct => prices.low,
                };
                out.push(Decision::new(treatment, charge));
            }
            Institution::Liability => {
                if problem == Problem::Big && treatment == Treatment::Lct {
                    continue;
                }
                out.extend(charges.iter().map(|&c| Decision::new(treatment, c)));
            }
        }
    }
    out
}

/// Checks one decision against the institution, naming the violated rule.
pub fn check_legal(
    institution: Institution,
    problem: Problem,
    decision: Decision,
    prices: PriceBook,
) -> Result<(), MarketError> {
    let violation = |rule: String| Err(MarketError::RuleViolation { rule });
    if decision.charge != prices.low && decision.charge != prices.high {
        return violation(format!("charge {} is not one of the posted prices {prices}", decision.charge));
    }
    match institution {
        Institution::NoInstitution => Ok(()),
        Institution::Verifiability => {
            let required = match decision.treatment {
                Treatment::Hct => prices.high,
                Treatment::Lct => prices.low,
            };
            if decision.charge != required {
                violation(format!(
                    "verifiability: {} must be charged at its posted price {required}, not {}",
                    decision.treatment, decision.charge
                ))
            } else {
                Ok(())
            }
        }
        Institution::Liability => {
            if problem == Problem::Big && decision.treatment == Treatment::Lct {
                violation("liability: a big problem must be solved with HCT".to_string())
            } else {
                Ok(())
            }
        }
    }
}

pub fn classify_fraud(
    institution: Institution,
    problem: Problem,
    decision: Decision,
    prices: PriceBook,
) -> Result<FraudFlags, MarketError> {
    check_legal(institution, problem, decision, prices)?;
    Ok(FraudFlags {
        under_treatment: problem == Problem::Big && decision.treatment == Treatment::Lct,
        over_treatment: problem == Problem::Small && decision.treatment == Treatment::Hct,
        over_charging: decision.treatment == Treatment::Lct
            && decision.charge == prices.high
            && !prices.is_degenerate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Treatment::{Hct, Lct};

    fn book(low: u32, high: u32) -> PriceBook {
        PriceBook { low, high }
    }

    fn set(ds: Vec<Decision>) -> Vec<(Treatment, u32)> {
        let mut v: Vec<_> = ds.into_iter().map(|d| (d.treatment, d.charge)).collect();
        v.sort();
        v
    }

    #[test]
    fn verifiability_ties_charge_to_treatment() {
        let got = set(legal_actions(Institution::Verifiability, Problem::Big, book(3, 7)));
        assert_eq!(got, vec![(Hct, 7), (Lct, 3)]);
    }

    #[test]
    fn liability_forces_hct_on_big_problems() {
        let got = set(legal_actions(Institution::Liability, Problem::Big, book(2, 5)));
        assert_eq!(got, vec![(Hct, 2), (Hct, 5)]);
        let small = legal_actions(Institution::Liability, Problem::Small, book(2, 5));
        assert_eq!(small.len(), 4);
    }

    #[test]
    fn equal_prices_collapse_charge_choice() {
        let got = set(legal_actions(Institution::NoInstitution, Problem::Small, book(4, 4)));
        assert_eq!(got, vec![(Hct, 4), (Lct, 4)]);
    }

    #[test]
    fn under_treatment_with_overcharge() {
        let f = classify_fraud(Institution::NoInstitution, Problem::Big, Decision::new(Lct, 7), book(3, 7)).unwrap();
        assert!(f.under_treatment && f.over_charging && !f.over_treatment);
    }

    #[test]
    fn honest_small_treatment_is_clean() {
        let f = classify_fraud(Institution::NoInstitution, Problem::Small, Decision::new(Lct, 3), book(3, 7)).unwrap();
        assert!(!f.any());
    }

    #[test]
    fn hct_at_high_price_is_not_overcharging() {
        let f = classify_fraud(Institution::Liability, Problem::Small, Decision::new(Hct, 5), book(2, 5)).unwrap();
        assert!(f.over_treatment);
        assert!(!f.over_charging);
    }

    #[test]
    fn degenerate_book_never_overcharges() {
        let f = classify_fraud(Institution::NoInstitution, Problem::Big, Decision::new(Lct, 3), book(3, 3)).unwrap();
        assert!(f.under_treatment);
        assert!(!f.over_charging);
    }

    #[test]
    fn illegal_decisions_name_the_rule() {
        let err =
            classify_fraud(Institution::Verifiability, Problem::Small, Decision::new(Lct, 7), book(3, 7)).unwrap_err();
        assert!(err.to_string().contains("verifiability"), "{err}");
        let err = classify_fraud(Institution::Liability, Problem::Big, Decision::new(Lct, 5), book(2, 5)).unwrap_err();
        assert!(err.to_string().contains("liability"), "{err}");
        let err =
            classify_fraud(Institution::NoInstitution, Problem::Big, Decision::new(Hct, 4), book(3, 7)).unwrap_err();
        assert!(err.to_string().contains("posted prices"), "{err}");
    }

    #[test]
    fn every_legal_action_classifies_and_respects_institution_invariants() {
        let grid = super::super::PriceGrid { min: 1, max: 11 };
        for inst in Institution::ALL {
            for problem in Problem::ALL {
                for b in grid.books() {
                    for d in legal_actions(inst, problem, b) {
                        let f = classify_fraud(inst, problem, d, b).unwrap();
                        if inst == Institution::Liability {
                            assert!(!f.under_treatment);
                        }
                        if inst == Institution::Verifiability {
                            assert!(!f.over_charging);
                        }
                    }
                }
            }
        }
    }
}

use std::sync::OnceLock;

use leakaudit::taxonomy::MaskPolicy;
use leakaudit::verification::mask_value;
use leakaudit::{AttributeId, Taxonomy};
use proptest::prelude::*;

fn policy(attr: &str) -> MaskPolicy {
    static TAXONOMY: OnceLock<Taxonomy> = OnceLock::new();
    TAXONOMY.get_or_init(Taxonomy::bundled).attribute(&AttributeId::new(attr)).unwrap().mask_policy.clone()
}

#[test]
fn fixed_examples() {
    assert_eq!(mask_value("george.thompson@outlook.com", &policy("Email")), "george.t*******@outlook.com");
    assert_eq!(mask_value("+86 138 4411 5022", &policy("PhoneNumber")), "+86 138 *****022");
}

proptest! {
    #[test]
    fn masking_is_idempotent(value in "[ -~]{0,40}", attr in prop::sample::select(vec![
        "Name", "Address", "Email", "PhoneNumber", "DateOfBirth", "Identity", "Password", "SecretKey", "CreditCard", "AuthenticationPIN",
    ])) {
        let p = policy(attr);
        let once = mask_value(&value, &p);
        prop_assert_eq!(mask_value(&once, &p), once);
    }

    #[test]
    fn long_values_never_pass_through(value in "[a-z0-9]{12,40}", attr in prop::sample::select(vec!["Name", "Identity", "Password", "SecretKey"])) {
        prop_assert_ne!(mask_value(&value, &policy(attr)), value);
    }

    #[test]
    fn email_domain_survives(local in "[a-z][a-z0-9.]{1,20}", domain in "[a-z]{2,10}\\.(com|org|cn)") {
        let v = format!("{local}@{domain}");
        let m = mask_value(&v, &policy("Email"));
        let suffix = format!("@{domain}");
        prop_assert!(m.ends_with(&suffix));
        prop_assert!(m.contains('*'));
    }
}

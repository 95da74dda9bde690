use super::*;

const TINY: &str = r#"
[meta]
name = "tiny"
agents = 1
horizon = 2

[[alphabets.local]]
agent = 1
time = "all"
values = ["lo", "hi"]

[[alphabets.action]]
agent = 1
time = "all"
values = ["stay", "move"]

[[admissible_actions]]
agent = 1
time = "all"
sets = [["stay"], ["stay", "move"]]

[[kernels.local]]
agent = 1
time = 1
values = [[[1.0, 0.0], []], [[0.25, 0.75], [1.0, 0.0]]]

[[utilities]]
agent = 1
time = "all"
values = [[[0.0, 0.0], [1.0, -2.5]]]

[initial]
local = [[0.5, 0.5]]
"#;

#[test]
fn parses_minimal_model() {
    let spec = parse_spec(TINY).unwrap();
    assert_eq!(spec.horizon, 2);
    assert_eq!(spec.num_agents, 1);
    assert_eq!(spec.admissible[0][0], vec![vec![0], vec![0, 1]]);
    assert!(!spec.local_kernel[0][0].is_defined(0, 1));
    assert_eq!(spec.observations[0][0], vec!["-".to_string()]);
    assert_eq!(spec.utility[0][1].get(0, 1, 1), -2.5);
}

#[test]
fn round_trip_is_identity() {
    let spec = parse_spec(TINY).unwrap();
    let again = parse_spec(&spec_to_toml(&spec)).unwrap();
    assert_eq!(spec, again);
}

#[test]
fn bad_row_sum_is_reported_with_location() {
    let text = TINY.replace("[[0.25, 0.75], [1.0, 0.0]]", "[[0.25, 0.65], [1.0, 0.0]]");
    let err = parse_spec(&text).unwrap_err();
    let Error::Invalid(diags) = err else { panic!("expected validation error") };
    assert_eq!(diags.len(), 1);
    assert!(diags[0].location.contains("agent=1,time=1,state=2,action_profile=1"), "{}", diags[0]);
    assert!(diags[0].message.contains("0.9"));
}

#[test]
fn empty_admissible_set_is_rejected() {
    let text = TINY.replace(r#"sets = [["stay"], ["stay", "move"]]"#, r#"sets = [[], ["stay", "move"]]"#);
    let Error::Invalid(diags) = parse_spec(&text).unwrap_err() else { panic!() };
    assert!(diags.iter().any(|d| d.message == "empty admissible action set" && d.location.contains("state=1")));
}

#[test]
fn all_violations_are_reported() {
    let text =
        TINY.replace("[[0.25, 0.75], [1.0, 0.0]]", "[[0.25, 0.65], [1.0, 0.2]]").replace("local = [[0.5, 0.5]]", "local = [[0.5, 0.6]]");
    let Error::Invalid(diags) = parse_spec(&text).unwrap_err() else { panic!() };
    assert_eq!(diags.len(), 3, "{diags:?}");
}

#[test]
fn negative_utilities_are_fine() {
    let text = TINY.replace("[1.0, -2.5]", "[-1.0, -2.5]");
    assert!(parse_spec(&text).is_ok());
}

#[test]
fn non_product_joint_prior_is_rejected() {
    let two = r#"
[meta]
agents = 2
horizon = 1

[[alphabets.local]]
agent = 1
time = "all"
values = ["a", "b"]

[[alphabets.local]]
agent = 2
time = "all"
values = ["a", "b"]

[[alphabets.action]]
agent = 1
time = "all"
values = ["go"]

[[alphabets.action]]
agent = 2
time = "all"
values = ["go"]

[[utilities]]
agent = 1
time = "all"
values = [[[0.0], [0.0], [0.0], [0.0]]]

[[utilities]]
agent = 2
time = "all"
values = [[[0.0], [0.0], [0.0], [0.0]]]

[initial]
joint = [0.5, 0.0, 0.0, 0.5]
"#;
    let Error::Invalid(diags) = parse_spec(two).unwrap_err() else { panic!() };
    assert!(diags[0].message.contains("independent"), "{}", diags[0]);
    let product = two.replace("joint = [0.5, 0.0, 0.0, 0.5]", "joint = [0.125, 0.375, 0.125, 0.375]");
    let spec = parse_spec(&product).unwrap();
    assert_eq!(spec.initial_marginals(), vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
}

#[test]
fn syntax_errors_carry_position() {
    let err = parse_spec("[meta\nagents = 1").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 1") || msg.contains("1:"), "{msg}");
}

#[test]
fn shipped_multiple_access_model_matches_the_builder() {
    let text = include_str!("../../../../models/mac.toml");
    let spec = parse_spec(text).unwrap();
    assert_eq!(spec, crate::games::mac::mac_spec(&crate::games::mac::MacParams::default()));
}

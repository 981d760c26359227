//! Prompt templates with `{{name}}` placeholders.

pub const SAG_SYSTEM: &str = include_str!("../assets/prompts/sag/system.txt");
pub const PURE_SYSTEM: &str = include_str!("../assets/prompts/pure/system.txt");
pub const SSAG_PREDICT: &str = include_str!("../assets/prompts/ssag/predict.txt");
pub const SSAG_RENDER: &str = include_str!("../assets/prompts/ssag/render.txt");
pub const SSAG_REFLECT: &str = include_str!("../assets/prompts/ssag/reflect.txt");

/// Substitutes every `{{key}}`. Panics on a placeholder without a value,
/// which can only come from a broken built-in template.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").expect("unterminated placeholder");
        let key = &after[..end];
        let value = values
            .iter()
            .find(|(k, _)| *k == key)
            .unwrap_or_else(|| panic!("no value for placeholder `{key}`"));
        out.push_str(value.1);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_all() {
        assert_eq!(render("a {{x}} b {{y}}{{x}}", &[("x", "1"), ("y", "2")]), "a 1 b 21");
    }

    #[test]
    fn builtin_templates_render() {
        let sag = render(
            SAG_SYSTEM,
            &[("title", "T"), ("context", "C"), ("closing_marker", "[X]")],
        );
        assert!(!sag.contains("{{"));
        let reflect = render(SSAG_REFLECT, &[("title", "T")]);
        assert!(!reflect.contains("{{"));
    }
}

//! Prompt templates and placeholder substitution.

use crate::error::{Error, Result};
use crate::vocab::{AttributeEntry, PromptType};

/// Retrieval query for an attribute–object pair.
pub const RETRIEVAL_TEMPLATE: &str = "A photo of {noun} that is {attribute}";

/// Zero-shot inference prompt for one attribute.
pub const INFERENCE_TEMPLATE: &str = "A photo of something that is {attribute}";

/// General noun bound to attributes when embedding soft-label prompts.
pub const SOFT_LABEL_NOUN: &str = "object";

pub const SOFT_LABEL_IS_TEMPLATES: [&str; 2] = ["a {attr} {noun}", "a {noun} is {attr}"];
pub const SOFT_LABEL_HAS_TEMPLATES: [&str; 2] = ["a {attr} {obj} {noun}", "a {noun} has {attr} {obj}"];

/// Compatibility-scoring prompt sent to the LLM.
pub const LLM_TEMPLATE: &str = "Let's play a role game. You will play the role of a researcher who is both a statistician and linguist. I will interpret a silly student who has many questions regarding language and statistics of language.

In particular, I will ask you to tell me which classes, or categories if you prefer, match or bind well with the attribute I will provide you. More precisely, you will have to tell me if each class/category that I will give you matches well the given attribute. You should also tell me how well they match on a scale 0 (the class cannot have the attribute) to 10 (the class can have the attribute and it is semantically fine to associate the attribute to the class).

Your response should list all the {count_categories} classes, and provide for each one of them the score on the scale explained above. The output format should be `class: score'. No explanation at all, just plain output.

Additional rules:
- do not provide any outputs but the list of chosen categories
- the output must be in the form of \"x. category: score\", where `x' is the index of the category
- the output must be in the form of a list
- make sure you provide a score for each category. There are {count_categories} categories, so the output list must have {count_categories} elements.

There are {count_categories} classes (categories).
The list of classes, or categories, is the following:
{categories}

The attribute is: {attribute}.";

/// Substitutes `{name}` placeholders. Every placeholder in the template must
/// be listed in `values`; a `{` without a closing `}` is also rejected.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::UnknownPlaceholder(after.chars().take(16).collect()))?;
        let name = &after[..close];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnknownPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The retrieval query text for an attribute bound to an object.
pub fn build_query(attribute: &AttributeEntry, object: &str, template: &str) -> Result<String> {
    render(template, &[("noun", object), ("attribute", &attribute.name)])
}

/// The pair of soft-label prompts for an attribute. `has`-type attributes
/// written as `part:value` (e.g. `fur:white`) fill `{obj}` with the part;
/// otherwise `{obj}` is left empty and whitespace collapsed.
pub fn soft_label_prompts(attribute: &AttributeEntry) -> Result<[String; 2]> {
    let (templates, attr, obj) = match attribute.prompt_type {
        PromptType::Is => (SOFT_LABEL_IS_TEMPLATES, attribute.name.as_str(), ""),
        PromptType::Has => match attribute.name.split_once(':') {
            Some((part, value)) => (SOFT_LABEL_HAS_TEMPLATES, value.trim(), part.trim()),
            None => (SOFT_LABEL_HAS_TEMPLATES, attribute.name.as_str(), ""),
        },
    };
    let fill = |t: &str| -> Result<String> {
        let s = render(t, &[("attr", attr), ("obj", obj), ("noun", SOFT_LABEL_NOUN)])?;
        Ok(s.split_whitespace().collect::<Vec<_>>().join(" "))
    };
    Ok([fill(templates[0])?, fill(templates[1])?])
}

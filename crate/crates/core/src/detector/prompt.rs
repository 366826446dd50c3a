use super::SampleRecord;
use crate::domain::{DomainSet, DEFAULT_DOMAINS};

/// JSON keys used by the six-domain annotation template, in domain order.
pub const SIX_DOMAIN_KEYS: [&str; 6] = ["Law", "Medicine", "Finance", "Science", "Code", "Other"];

const SIX_DOMAIN_TEMPLATE: &str = "You are a data domain annotation expert, and you currently have the following six data domains: law, medical && health care, finance, science, code, and other. Please classify the following text fragment based on their topic and structure by providing the probability distribution of its belonging to each category, where the sum of probabilities across all domain categories equals 1, without additional commentary:

# Text
{text_content}

------------------------------------------------------------

Output Format:
```json
{
    \"Law\": \"\",
    \"Medicine\": \"\",
    \"Finance\": \"\",
    \"Science\": \"\",
    \"Code\": \"\",
    \"Other\": \"\"
}
```";

/// True when `domains` is the standard six-domain layout (case-insensitive).
pub fn is_six_domain_layout(domains: &DomainSet) -> bool {
    domains.len() == DEFAULT_DOMAINS.len()
        && domains
            .names()
            .iter()
            .zip(DEFAULT_DOMAINS)
            .all(|(n, d)| n.eq_ignore_ascii_case(d))
}

/// JSON keys the classifier is asked to return, in domain order.
pub fn output_keys(domains: &DomainSet) -> Vec<String> {
    if is_six_domain_layout(domains) {
        SIX_DOMAIN_KEYS.iter().map(|s| s.to_string()).collect()
    } else {
        domains.names().to_vec()
    }
}

fn number_word(k: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS
        .get(k)
        .map_or_else(|| k.to_string(), |w| w.to_string())
}

fn json_skeleton(keys: &[String]) -> String {
    let body: Vec<String> = keys
        .iter()
        .map(|k| format!("    {}: \"\"", serde_json::Value::String(k.clone())))
        .collect();
    format!("```json\n{{\n{}\n}}\n```", body.join(",\n"))
}

fn generic_template(domains: &DomainSet) -> String {
    let names = domains.names();
    let listed = match names.split_last() {
        Some((last, rest)) => format!("{}, and {}", rest.join(", "), last),
        None => String::new(),
    };
    format!(
        "You are a data domain annotation expert, and you currently have the following {} data domains: {}. Please classify the following text fragment based on their topic and structure by providing the probability distribution of its belonging to each category, where the sum of probabilities across all domain categories equals 1, without additional commentary: \n\n# Text\n{{text_content}}\n\n------------------------------------------------------------\n\nOutput Format:\n{}",
        number_word(names.len()),
        listed,
        json_skeleton(&output_keys(domains)),
    )
}

/// Classification prompt for one generated sample.
pub fn build_prompt(sample: &SampleRecord, domains: &DomainSet) -> String {
    let template = if is_six_domain_layout(domains) {
        SIX_DOMAIN_TEMPLATE.to_string()
    } else {
        generic_template(domains)
    };
    template.replacen("{text_content}", &sample.text, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(text: &str) -> SampleRecord {
        SampleRecord::new("s1", text).unwrap()
    }

    #[test]
    fn six_domain_prompt_embeds_text() {
        let p = build_prompt(&sample("int main(){}"), &DomainSet::standard());
        assert!(p.starts_with("You are a data domain annotation expert"));
        assert!(p.contains("Please classify the following text fragment"));
        assert!(p.contains("# Text\nint main(){}\n"));
        for key in SIX_DOMAIN_KEYS {
            assert!(p.contains(&format!("\"{key}\": \"\"")));
        }
        assert!(!p.contains("{text_content}"));
    }

    #[test]
    fn text_with_placeholder_is_not_reexpanded() {
        let p = build_prompt(&sample("literal {text_content}"), &DomainSet::standard());
        assert!(p.contains("literal {text_content}"));
    }

    #[test]
    fn custom_domains_get_generic_template() {
        let domains = DomainSet::new(["poetry", "sports", "cooking"]).unwrap();
        let p = build_prompt(&sample("a haiku"), &domains);
        assert!(p.contains("following three data domains: poetry, sports, and cooking."));
        assert!(p.contains("\"poetry\": \"\""));
        assert!(p.contains("\"sports\": \"\""));
        assert!(p.contains("\"cooking\": \"\""));
        assert!(!p.contains("\"Law\""));
        assert!(p.contains("a haiku"));
        assert_eq!(output_keys(&domains), vec!["poetry", "sports", "cooking"]);
    }

    #[test]
    fn layout_detection_is_case_insensitive() {
        let caps =
            DomainSet::new(["Law", "Medicine", "Finance", "Science", "Code", "Other"]).unwrap();
        assert!(is_six_domain_layout(&caps));
        let reordered =
            DomainSet::new(["medicine", "law", "finance", "science", "code", "other"]).unwrap();
        assert!(!is_six_domain_layout(&reordered));
    }
}

use crate::sample::{Category, NUM_CATEGORIES};

const DEFAULT_PROMPTS: [&str; NUM_CATEGORIES] = [
    "The driver is driving normally with both hands on the steering wheel.",
    "The driver is texting with the right hand while driving.",
    "The driver is holding a phone to the right ear while driving.",
    "The driver is texting with the left hand while driving.",
    "The driver is holding a phone to the left ear while driving.",
    "The driver is adjusting the car's multimedia or infotainment system.",
    "The driver is drinking water while driving.",
    "The driver is reaching toward the back seat to grab something.",
    "The driver is applying makeup while driving.",
    "The driver is talking to a passenger while driving.",
];

const QUERY_PREFIX: &str = "How well does this image match the description: \u{201c}";
const QUERY_SUFFIX: &str =
    "\u{201d}? Respond with a number between 0 and 1, where 1 means perfect match.";

/// One declarative prompt per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTable {
    prompts: [String; NUM_CATEGORIES],
}

impl Default for PromptTable {
    fn default() -> Self {
        Self {
            prompts: DEFAULT_PROMPTS.map(String::from),
        }
    }
}

impl PromptTable {
    pub fn new(prompts: [String; NUM_CATEGORIES]) -> Self {
        Self { prompts }
    }

    pub fn prompt(&self, c: Category) -> &str {
        &self.prompts[c.id()]
    }

    /// Category whose prompt appears in `query`, if any.
    pub fn category_of_query(&self, query: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|&c| query.contains(self.prompt(c)))
    }
}

/// The numeric consistency query for one category.
pub fn build_query(category: Category, table: &PromptTable) -> String {
    format!("{QUERY_PREFIX}{}{QUERY_SUFFIX}", table.prompt(category))
}

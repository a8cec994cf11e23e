//! Scripted model behaviour for six fixture questions, covering correct
//! and incorrect arms, refinement, exhausted refinement, merge fallback and
//! column-selection fallback.

use divmerge::dataset::{load_examples, BenchmarkExample};
use divmerge::llm::ScriptEntry;
use divmerge::pipeline::MergeStrategy;

use super::scripted::{chain, fenced, ScriptedFactory};

pub struct Scenario {
    pub dev_index: usize,
    pub tables: &'static str,
    pub decomposition: &'static str,
    pub subqueries: Vec<(&'static str, Vec<String>)>,
    pub plan: &'static str,
    pub merge_exec: Vec<String>,
    pub column_selection: Vec<String>,
    pub baseline: Vec<String>,
    pub baseline_correct: bool,
    /// Module correctness per (merge strategy, column selection).
    pub module_correct: fn(MergeStrategy, bool) -> bool,
}

fn sql(s: &str) -> String {
    fenced(s)
}

fn times(s: &str, n: usize) -> Vec<String> {
    vec![sql(s); n]
}

const S1_DM: &str = "SELECT customer_id, customer_first_name, customer_last_name FROM Customers WHERE customer_id IN ( SELECT c.customer_id FROM Customers c JOIN Orders o ON c.customer_id = o.customer_id GROUP BY c.customer_id HAVING COUNT(o.order_id) > 2 INTERSECT SELECT c.customer_id FROM Customers c JOIN Orders o ON c.customer_id = o.customer_id JOIN Order_Items oi ON o.order_id = oi.order_id GROUP BY c.customer_id HAVING COUNT(oi.order_item_id) >= 3 )";
const S1_BASE: &str = "SELECT c.customer_id, c.customer_first_name, c.customer_last_name FROM Customers c JOIN Orders o ON c.customer_id = o.customer_id GROUP BY c.customer_id HAVING COUNT(o.order_id) > 2 INTERSECT SELECT c.customer_id, c.customer_first_name, c.customer_last_name FROM Customers c JOIN Order_Items oi ON c.customer_id = oi.customer_id GROUP BY c.customer_id HAVING COUNT(oi.order_item_id) >= 3;";
const S2_DM: &str =
    "SELECT AVG(p.product_price) AS average_price FROM Order_Items oi JOIN Products p ON oi.product_id = p.product_id;";
const S3_LAST: &str =
    "SELECT Affiliation, COUNT(*) AS count FROM city_channel GROUP BY Affiliation ORDER BY count DESC LIMIT 1;";
const S3_MERGED: &str = "SELECT Affiliation FROM ( SELECT Affiliation, COUNT(*) AS count FROM city_channel GROUP BY Affiliation ORDER BY count DESC ) AS grouped_affiliations LIMIT 1;";
const F2_DM: &str = "SELECT b.Name, b.Number_of_Stories FROM building b JOIN ( SELECT Region_ID FROM region WHERE Name = 'Abruzzo' ) AS r ON b.Region_ID = r.Region_ID;";

pub fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            dev_index: 0,
            tables: "Customers, Orders, Order_Items",
            decomposition: "1. Find customers who have placed more than 2 orders.\n2. Retrieve the id, first name and last name of customers who also bought at least 3 items.",
            subqueries: vec![
                (
                    "Find customers who have placed more than 2 orders.",
                    vec![sql("SELECT customer_id FROM Orders GROUP BY customer_id HAVING COUNT(*) > 2")],
                ),
                (
                    "Retrieve the id, first name and last name of customers who also bought at least 3 items.",
                    vec![sql(S1_DM)],
                ),
            ],
            plan: "Sub-query 2 already intersects both conditions; return it unchanged.",
            merge_exec: vec![sql(S1_DM)],
            column_selection: vec![sql(S1_DM)],
            // invalid join path, repeated through every refinement
            baseline: times(S1_BASE, 4),
            baseline_correct: false,
            module_correct: |_, _| true,
        },
        Scenario {
            dev_index: 1,
            tables: "Products\nOrder_Items",
            decomposition: "1. Find the price of each product.\n2. Join Order_Items with Products to get the prices of ordered products.\n3. Calculate the average price of the ordered products.",
            subqueries: vec![
                ("Find the price of each product.", vec![sql("SELECT product_id, product_price FROM Products")]),
                (
                    "Join Order_Items with Products to get the prices of ordered products.",
                    vec![sql("SELECT p.product_price FROM Order_Items oi JOIN Products p ON oi.product_id = p.product_id")],
                ),
                ("Calculate the average price of the ordered products.", vec![sql(S2_DM)]),
            ],
            plan: "Average the product prices over the joined order items.",
            merge_exec: vec![sql("SELECT AVG(price) FROM Order_Items"), sql(S2_DM)],
            column_selection: vec![sql(S2_DM)],
            baseline: vec![sql("SELECT AVG(product_price) FROM Products;")],
            baseline_correct: false,
            module_correct: |_, _| true,
        },
        Scenario {
            dev_index: 8,
            tables: "city_channel",
            decomposition: "1. Select the Affiliation column from the city_channel table.\n2. Select the Affiliation column from the city_channel table.\n3. Count the channels per affiliation, most common first.",
            subqueries: vec![
                ("Select the Affiliation column from the city_channel table.", vec![sql("SELECT Affiliation FROM city_channel")]),
                ("Select the Affiliation column from the city_channel table.", vec![sql("SELECT Affiliation FROM city_channel")]),
                ("Count the channels per affiliation, most common first.", vec![sql(S3_LAST)]),
            ],
            plan: "Wrap the grouped counts and keep only the top affiliation.",
            merge_exec: vec![sql(S3_MERGED)],
            column_selection: vec![sql(
                "SELECT Affiliation FROM city_channel GROUP BY Affiliation ORDER BY COUNT(*) DESC LIMIT 1",
            )],
            baseline: vec![sql(S3_LAST)],
            baseline_correct: false,
            module_correct: |merge, cs| cs || merge == MergeStrategy::PlannerExecutor,
        },
        Scenario {
            dev_index: 15,
            tables: "building, region",
            decomposition: "1. Find the Region_ID for the region named \"Abruzzo\".\n2. Retrieve the Name and Number_of_Stories for buildings in that region.",
            subqueries: vec![
                (
                    "Find the Region_ID for the region named \"Abruzzo\".",
                    vec![sql("SELECT Region_ID FROM region WHERE Name = 'Abruzzo'")],
                ),
                ("Retrieve the Name and Number_of_Stories for buildings in that region.", vec![sql(F2_DM)]),
            ],
            plan: "Return sub-query 2.",
            merge_exec: vec![sql(F2_DM)],
            // never runs, so the merged query is kept
            column_selection: times(
                "SELECT b.Number_of_Stories FROM building b JOIN region r ON b.Region_ID = r.Region_ID WHERE r.Nmae = 'Abruzzo'",
                4,
            ),
            baseline: vec![sql(
                "SELECT b.Number_of_Stories FROM building b JOIN region r ON b.Region_ID = r.Region_ID WHERE r.Name = 'Abruzzo';",
            )],
            baseline_correct: true,
            module_correct: |_, _| false,
        },
        Scenario {
            dev_index: 9,
            tables: "city_channel",
            decomposition: "1. Count the rows of city_channel.",
            subqueries: vec![("Count the rows of city_channel.", vec![sql("SELECT count(*) FROM city_channel")])],
            plan: "Use the count.",
            // executor never produces runnable SQL: fall back to the last sub-query
            merge_exec: times("SELECT count(*) FROM city_channels", 4),
            column_selection: vec![sql("SELECT count(*) FROM city_channel")],
            baseline: vec![sql("SELECT COUNT(*) FROM city_channel")],
            baseline_correct: true,
            module_correct: |_, _| true,
        },
        Scenario {
            dev_index: 16,
            // unknown table: full schema is kept
            tables: "towers",
            // empty decomposition: the question itself is the only sub-question
            decomposition: "",
            subqueries: vec![(
                "How many buildings are there?",
                [vec!["I cannot write this query.".to_string()], times("SELECT count(*) FROM buildings", 3)].concat(),
            )],
            plan: "Return the count.",
            merge_exec: times("SELECT count(*) FROM buildings", 4),
            column_selection: times("SELECT count(*) FROM buildings", 4),
            baseline: vec![sql("SELECT count(*) FROM building")],
            baseline_correct: true,
            module_correct: |_, _| false,
        },
    ]
}

impl Scenario {
    pub fn scripts(&self) -> (Vec<ScriptEntry>, Vec<ScriptEntry>) {
        let mut reasoning = Vec::new();
        reasoning.push(ScriptEntry::new("Task: table selection.", self.tables));
        reasoning.push(ScriptEntry::new("Task: question decomposition.", self.decomposition));
        reasoning.push(ScriptEntry::new("Task: merge planning.", self.plan));
        chain(&mut reasoning, "Task: column selection.", &self.column_selection);
        let judged = if (self.module_correct)(MergeStrategy::PlannerExecutor, true) {
            "COMPLEX"
        } else {
            "SIMPLE"
        };
        reasoning.push(ScriptEntry::new("Task: complexity judgement.", judged));

        let mut coding = Vec::new();
        for (text, replies) in &self.subqueries {
            chain(&mut coding, &format!("Current sub-question: {text}\n"), replies);
        }
        chain(&mut coding, "Task: merge execution.", &self.merge_exec);
        chain(&mut coding, "Task: text-to-SQL.", &self.baseline);
        (reasoning, coding)
    }
}

/// The scenario questions as an example list, plus a factory scripting them.
pub fn scenario_set() -> (Vec<BenchmarkExample>, Vec<Scenario>, ScriptedFactory) {
    let dev = load_examples(&super::dev_json()).unwrap();
    let scenarios = scenarios();
    let mut factory = ScriptedFactory::default();
    let examples: Vec<BenchmarkExample> = scenarios.iter().map(|s| dev[s.dev_index].clone()).collect();
    for (s, ex) in scenarios.iter().zip(&examples) {
        factory.scripts.insert(ex.question.clone(), s.scripts());
    }
    (examples, scenarios, factory)
}

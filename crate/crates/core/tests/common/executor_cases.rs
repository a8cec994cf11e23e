/// (database, gold SQL, predicted SQL, expected verdict, what the case covers)
pub type Case = (&'static str, &'static str, &'static str, bool, &'static str);

pub const CASES: &[Case] = &[
    // concert_singer
    ("concert_singer", "SELECT count(*) FROM singer", "SELECT count(Singer_ID) FROM singer", true, "equivalent count"),
    ("concert_singer", "SELECT Name FROM singer WHERE Country = 'France'", "SELECT Name FROM singer WHERE Country = 'France' ORDER BY Age", true, "gold unordered, predicted ordered"),
    ("concert_singer", "SELECT Name FROM singer ORDER BY Age DESC", "SELECT Name FROM singer ORDER BY Age ASC", false, "order sensitive, reversed"),
    ("concert_singer", "SELECT Name FROM singer ORDER BY Age DESC", "SELECT Name FROM singer", false, "order sensitive, unordered prediction"),
    ("concert_singer", "SELECT Name FROM singer ORDER BY Age", "SELECT Name FROM singer ORDER BY Age ASC", true, "order sensitive, same order"),
    ("concert_singer", "SELECT Name FROM singer", "SELECT Name, Age FROM singer", false, "column count mismatch"),
    ("concert_singer", "SELECT Name, Age FROM singer", "SELECT Age, Name FROM singer", false, "column order matters"),
    ("concert_singer", "SELECT Country FROM singer", "SELECT DISTINCT Country FROM singer", false, "multiset multiplicity"),
    ("concert_singer", "SELECT Country FROM singer", "SELECT Country FROM singer ORDER BY Country DESC", true, "multiset equality under permutation"),
    ("concert_singer", "SELECT avg(Net_Worth) FROM singer", "SELECT sum(Net_Worth) / count(Net_Worth) FROM singer", true, "float aggregate equivalence"),
    ("concert_singer", "SELECT 0.1 + 0.2", "SELECT 0.3", true, "float within tolerance"),
    ("concert_singer", "SELECT 1.0", "SELECT 1.00001", false, "float beyond tolerance"),
    ("concert_singer", "SELECT count(*) FROM singer", "SELECT 6.0", true, "integer and real unify"),
    ("concert_singer", "SELECT Song_release_year FROM singer", "SELECT CAST(Song_release_year AS INTEGER) FROM singer", false, "text is not a number"),
    ("concert_singer", "SELECT Net_Worth FROM singer WHERE Singer_ID = 6", "SELECT NULL", true, "null equals null"),
    ("concert_singer", "SELECT Name FROM singer WHERE Age > 100", "SELECT Name FROM singer WHERE Age > 200", true, "both empty"),
    ("concert_singer", "SELECT Name FROM singer WHERE Age > 40", "SELECT Name FROM singer WHERE Age > 200", false, "empty prediction"),
    ("concert_singer", "SELECT Name FROM singer", "SELEC Name FROM singer", false, "syntax error"),
    ("concert_singer", "SELECT Name FROM singer", "SELECT Nickname FROM singer", false, "no such column"),
    ("concert_singer", "SELECT Name FROM singer ORDER BY Age DESC LIMIT 2", "SELECT Name FROM singer ORDER BY Age DESC LIMIT 3", false, "row count mismatch"),
    ("concert_singer", "SELECT T2.Name FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID WHERE T1.Year = '2014'", "SELECT s.Name FROM stadium s, concert c WHERE s.Stadium_ID = c.Stadium_ID AND c.Year = '2014'", true, "join rewritten as implicit join"),
    ("concert_singer", "SELECT Name FROM (SELECT Name, Age FROM singer ORDER BY Age)", "SELECT Name FROM singer", true, "ORDER BY inside subquery only"),
    ("concert_singer", "SELECT Name FROM singer WHERE Song_Name <> 'order by'", "SELECT Name FROM singer ORDER BY Name DESC", true, "ORDER BY inside string literal"),
    ("concert_singer", "SELECT Name FROM singer", "WITH RECURSIVE r(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM r) SELECT count(*) FROM r", false, "timeout"),
    // e_commerce
    ("e_commerce", "SELECT T2.customer_id, T2.customer_first_name, T2.customer_last_name FROM Orders AS T1 JOIN Customers AS T2 ON T1.customer_id = T2.customer_id GROUP BY T2.customer_id HAVING count(*) > 2 INTERSECT SELECT T2.customer_id, T2.customer_first_name, T2.customer_last_name FROM Orders AS T1 JOIN Customers AS T2 ON T1.customer_id = T2.customer_id JOIN Order_Items AS T3 ON T1.order_id = T3.order_id GROUP BY T2.customer_id HAVING count(*) >= 3",
        "SELECT customer_id, customer_first_name, customer_last_name FROM Customers WHERE customer_id IN ( SELECT c.customer_id FROM Customers c JOIN Orders o ON c.customer_id = o.customer_id GROUP BY c.customer_id HAVING COUNT(o.order_id) > 2 INTERSECT SELECT c.customer_id FROM Customers c JOIN Orders o ON c.customer_id = o.customer_id JOIN Order_Items oi ON o.order_id = oi.order_id GROUP BY c.customer_id HAVING COUNT(oi.order_item_id) >= 3 )",
        true, "decomposed INTERSECT query"),
    ("e_commerce", "SELECT T2.customer_id, T2.customer_first_name, T2.customer_last_name FROM Orders AS T1 JOIN Customers AS T2 ON T1.customer_id = T2.customer_id GROUP BY T2.customer_id HAVING count(*) > 2 INTERSECT SELECT T2.customer_id, T2.customer_first_name, T2.customer_last_name FROM Orders AS T1 JOIN Customers AS T2 ON T1.customer_id = T2.customer_id JOIN Order_Items AS T3 ON T1.order_id = T3.order_id GROUP BY T2.customer_id HAVING count(*) >= 3",
        "SELECT c.customer_id, c.customer_first_name, c.customer_last_name FROM Customers c JOIN Orders o ON c.customer_id = o.customer_id GROUP BY c.customer_id HAVING COUNT(o.order_id) > 2 INTERSECT SELECT c.customer_id, c.customer_first_name, c.customer_last_name FROM Customers c JOIN Order_Items oi ON c.customer_id = oi.customer_id GROUP BY c.customer_id HAVING COUNT(oi.order_item_id) >= 3;",
        false, "invalid join path"),
    ("e_commerce", "SELECT avg(T1.product_price) FROM Products AS T1 JOIN Order_Items AS T2 ON T1.product_id = T2.product_id", "SELECT AVG(p.product_price) AS average_price FROM Order_Items oi JOIN Products p ON oi.product_id = p.product_id;", true, "average over ordered products"),
    ("e_commerce", "SELECT avg(T1.product_price) FROM Products AS T1 JOIN Order_Items AS T2 ON T1.product_id = T2.product_id", "SELECT AVG(product_price) FROM Products;", false, "average ignores orders"),
    ("e_commerce", "SELECT count(*) FROM Products", "SELECT count(product_id) FROM Products", true, "equivalent count"),
    ("e_commerce", "SELECT order_status_code, count(*) FROM Orders GROUP BY order_status_code", "SELECT order_status_code, COUNT(order_id) FROM Orders GROUP BY order_status_code ORDER BY 2", true, "group counts, any order"),
    ("e_commerce", "SELECT order_status_code, count(*) FROM Orders GROUP BY order_status_code", "SELECT count(*), order_status_code FROM Orders GROUP BY order_status_code", false, "group counts, swapped columns"),
    ("e_commerce", "SELECT customer_last_name FROM Customers WHERE customer_id NOT IN (SELECT customer_id FROM Orders)", "SELECT c.customer_last_name FROM Customers c LEFT JOIN Orders o ON c.customer_id = o.customer_id WHERE o.order_id IS NULL", true, "anti-join rewrite"),
    ("e_commerce", "SELECT T1.shipment_tracking_number FROM Shipments AS T1 JOIN Invoices AS T2 ON T1.invoice_number = T2.invoice_number WHERE T2.invoice_status_code = 'Paid'", "SELECT shipment_tracking_number FROM Shipments", false, "missing filter"),
    ("e_commerce", "SELECT product_name FROM Products ORDER BY product_price ASC", "SELECT product_name FROM Products ORDER BY product_price", true, "default ascending order"),
    // tv_channels
    ("tv_channels", "SELECT Affiliation FROM city_channel GROUP BY Affiliation ORDER BY count(*) DESC LIMIT 1", "SELECT Affiliation FROM ( SELECT Affiliation, COUNT(*) AS count FROM city_channel GROUP BY Affiliation ORDER BY count DESC ) AS grouped_affiliations LIMIT 1;", true, "top group via subquery"),
    ("tv_channels", "SELECT Affiliation FROM city_channel GROUP BY Affiliation ORDER BY count(*) DESC LIMIT 1", "SELECT Affiliation, COUNT(*) AS count FROM city_channel GROUP BY Affiliation ORDER BY count DESC LIMIT 1;", false, "extra count column"),
    ("tv_channels", "SELECT City FROM city_channel ORDER BY Owned_Since ASC", "SELECT City FROM city_channel ORDER BY Owned_Since DESC", false, "order sensitive, reversed"),
    ("tv_channels", "SELECT avg(Owned_Since) FROM city_channel", "SELECT sum(Owned_Since) / count(*) FROM city_channel", true, "real average"),
    ("tv_channels", "SELECT Affiliation, count(*) FROM city_channel GROUP BY Affiliation", "SELECT Affiliation, count(*) FROM city_channel GROUP BY Affiliation HAVING count(*) > 0", true, "vacuous HAVING"),
    ("tv_channels", "SELECT Transmitter FROM radio WHERE CAST(ERP_kW AS INTEGER) > 30", "SELECT Transmitter FROM radio WHERE ERP_kW > 30", false, "text compared with number"),
    ("tv_channels", "SELECT DISTINCT T1.tv_show_name FROM tv_show AS T1 JOIN city_channel_tv_show AS T2 ON T1.tv_show_ID = T2.tv_show_ID WHERE T2.Is_online = 'TRUE'", "SELECT T1.tv_show_name FROM tv_show AS T1 JOIN city_channel_tv_show AS T2 ON T1.tv_show_ID = T2.tv_show_ID WHERE T2.Is_online = 'TRUE'", false, "missing DISTINCT keeps duplicates"),
    ("tv_channels", "SELECT \"2FM_MHz\" FROM radio WHERE Radio_ID = 1", "SELECT [2FM_MHz] FROM radio WHERE Radio_ID = 1", true, "quoted identifiers"),
    // buildings
    ("buildings", "SELECT T1.Number_of_Stories FROM building AS T1 JOIN region AS T2 ON T1.Region_ID = T2.Region_ID WHERE T2.Name = 'Abruzzo'", "SELECT b.Name, b.Number_of_Stories FROM building b JOIN ( SELECT Region_ID FROM region WHERE Name = 'Abruzzo' ) AS r ON b.Region_ID = r.Region_ID;", false, "extra name column"),
    ("buildings", "SELECT T1.Number_of_Stories FROM building AS T1 JOIN region AS T2 ON T1.Region_ID = T2.Region_ID WHERE T2.Name = 'Abruzzo'", "SELECT b.Number_of_Stories FROM building b JOIN region r ON b.Region_ID = r.Region_ID WHERE r.Name = 'Abruzzo';", true, "stories per building"),
    ("buildings", "SELECT T1.Number_of_Stories FROM building AS T1 JOIN region AS T2 ON T1.Region_ID = T2.Region_ID WHERE T2.Name = 'Abruzzo'", "SELECT DISTINCT b.Number_of_Stories FROM building b JOIN region r ON b.Region_ID = r.Region_ID WHERE r.Name = 'Abruzzo'", false, "duplicate story counts collapsed"),
    ("buildings", "SELECT Capital FROM region ORDER BY Population DESC LIMIT 1", "SELECT Capital FROM region WHERE Population = (SELECT max(Population) FROM region)", true, "argmax rewrite"),
    ("buildings", "SELECT count(*) FROM building", "SELECT count(*) FROM region", false, "wrong table"),
    ("buildings", "SELECT T2.Name, count(*) FROM building AS T1 JOIN region AS T2 ON T1.Region_ID = T2.Region_ID GROUP BY T2.Name", "SELECT r.Name, count(b.Building_ID) FROM region r JOIN building b ON r.Region_ID = b.Region_ID GROUP BY r.Region_ID", true, "group by key instead of name"),
    // agencies
    ("agencies", "SELECT agency_id, count(*) FROM Clients GROUP BY agency_id", "SELECT agency_id, COUNT(client_id) AS client_count FROM Agencies a JOIN Clients c ON a.agency_id = c.agency_id GROUP BY agency_id;", false, "ambiguous column after join"),
    ("agencies", "SELECT agency_id, count(*) FROM Clients GROUP BY agency_id", "SELECT agency_id, COUNT(client_id) AS client_count FROM Clients GROUP BY agency_id;", true, "grouping over clients"),
    ("agencies", "SELECT T1.client_id FROM Clients AS T1 JOIN Invoices AS T2 ON T1.client_id = T2.client_id", "SELECT client_id FROM Clients c JOIN Invoices i ON c.client_id = i.client_id", false, "ambiguous column in select list"),
    ("agencies", "SELECT agency_id FROM Agencies EXCEPT SELECT agency_id FROM Clients", "SELECT agency_id FROM Agencies WHERE agency_id NOT IN (SELECT agency_id FROM Clients)", true, "EXCEPT as NOT IN"),
    ("agencies", "SELECT count(DISTINCT client_id) FROM Invoices", "SELECT count(client_id) FROM Invoices", false, "distinct count"),
    ("agencies", "SELECT payment_details, count(*) FROM Payments GROUP BY payment_details", "SELECT payment_details, count(*) FROM Payments GROUP BY 1 ORDER BY 2 DESC", true, "positional GROUP BY"),
];

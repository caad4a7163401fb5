//! Templates cast in the scenarios. Keys and types follow the contracts the
//! use cases describe; the legal prose is synthetic.

use conet_core::contract::Element;
use conet_core::Template;

pub fn component_sale() -> Template {
    Template::new(
        "Component Sale",
        vec![
            Element::parameter("price", "int"),
            Element::parameter("quantity", "positiveInt"),
            Element::provision("The buyer pays ${price} EUR for ${quantity} components."),
        ],
    )
}

pub fn data_purchase() -> Template {
    Template::new(
        "Data Purchase",
        vec![
            Element::parameter("seller", "party"),
            Element::parameter("buyer", "party"),
            Element::parameter("datum", "reference"),
            Element::parameter("price", "currencyAmount"),
            Element::provision(
                "${seller} grants ${buyer} one copy of the dataset ${datum}. \
                 ${buyer} pays ${price} and keeps the dataset confidential.",
            ),
        ],
    )
}

pub fn customer_sale() -> Template {
    Template::new(
        "Customer Sale",
        vec![
            Element::parameter("buyer", "party"),
            Element::parameter("amount", "currencyAmount"),
            Element::parameter("dueBy", "timestamp"),
            Element::provision("${buyer} pays ${amount} to the seller no later than ${dueBy}."),
        ],
    )
}

/// Receivable parameter `i`, counting from 1.
pub fn receivable_key(i: usize) -> String {
    format!("receivable{i}")
}

/// A short-term loan secured by `receivables` customer contracts.
pub fn loan(receivables: usize) -> Template {
    let mut elements = vec![
        Element::parameter("lender", "party"),
        Element::parameter("borrower", "party"),
        Element::parameter("principal", "currencyAmount"),
        Element::parameter("interestPercent", "decimal"),
        Element::provision(
            "${lender} lends ${principal} to ${borrower} at ${interestPercent} percent interest, \
             repaid in full within 90 days.",
        ),
    ];
    for i in 1..=receivables {
        elements.push(Element::parameter(receivable_key(i), "reference"));
    }
    let pledged: Vec<String> = (1..=receivables).map(|i| format!("${{{}}}", receivable_key(i))).collect();
    elements.push(Element::provision(format!(
        "${{borrower}} pledges the payments due under {} as security.",
        pledged.join(", ")
    )));
    Template::new("Short-Term Loan", elements)
}

/// A reconstruction: quantity, price and buyer keys plus a seller party.
/// Parameter types are chosen here, not taken from a published form.
pub fn steel_rod_purchase() -> Template {
    Template::new(
        "Steel Rod Purchase",
        vec![
            Element::parameter("buyer", "party"),
            Element::parameter("quantity", "positiveInt"),
            Element::parameter("price", "currencyAmount"),
            Element::parameter("deliveryBy", "timestamp"),
            Element::provision(
                "${buyer} orders ${quantity} steel rods and pays ${price} if they are manufactured \
                 no later than ${deliveryBy}.",
            ),
        ],
    )
}

pub fn delivery_and_payment() -> Template {
    Template::new(
        "Delivery and Payment",
        vec![
            Element::parameter("order", "reference"),
            Element::parameter("buyer", "party"),
            Element::parameter("amount", "currencyAmount"),
            Element::provision("The components ordered under ${order} are delivered to ${buyer}, who pays ${amount}."),
        ],
    )
}

pub fn device_sale() -> Template {
    Template::new(
        "Device Sale",
        vec![
            Element::parameter("seller", "party"),
            Element::parameter("buyer", "party"),
            Element::parameter("device", "party"),
            Element::parameter("deviceCertificate", "reference"),
            Element::parameter("sellerKeyCertificate", "reference"),
            Element::parameter("buyerKeyCertificate", "reference"),
            Element::parameter("price", "currencyAmount"),
            Element::provision(
                "${seller} sells the device ${device}, now certified by ${deviceCertificate}, to ${buyer} \
                 for ${price}. Ownership passes from the key manager certified by ${sellerKeyCertificate} \
                 to the key manager certified by ${buyerKeyCertificate} once the device reregisters.",
            ),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_well_formed() {
        for t in [
            component_sale(),
            data_purchase(),
            customer_sale(),
            loan(1),
            loan(7),
            steel_rod_purchase(),
            delivery_and_payment(),
            device_sale(),
        ] {
            t.check().unwrap();
        }
        assert_eq!(loan(3).parameters().count(), 7);
    }
}

"""Trees, split decisions and Parseval scores."""
from topdown_drs.tree import (Leaf, Node, aggregate_report, binarize_right, binary, decisions_to_tree,
                              left_branching, parseval, right_branching, tree_to_decisions)

# the 7-EDU example tree: root split at 3
gold = binary(
    binary(Leaf(0), binary(Leaf(1), Leaf(2), "NN", "Joint"), "NS", "Elaboration"),
    binary(binary(Leaf(3), Leaf(4), "SN", "Condition"), binary(Leaf(5), Leaf(6), "NS", "Explanation"),
           "NN", "Contrast"),
    "NS", "Cause")

# decisions come out in the order a top-down decoder would emit them
for d in tree_to_decisions(gold):
    print(f"span {d.span} split at {d.split}  {d.nuclearity} {d.relation}")
assert decisions_to_tree(tree_to_decisions(gold), 7) == gold

# n-ary nodes are binarised right-branching
three = Node((Leaf(0), Leaf(1), Leaf(2)), "NNN", "List")
print(binarize_right(three))

# scores: a perfect tree, and a 4-EDU chain against its mirror image
print(aggregate_report([parseval(gold, gold)]).micro)
print(aggregate_report([parseval(right_branching(4), left_branching(4))]).micro)

# micro pools spans, macro averages trees
small = binary(Leaf(0), binary(Leaf(1), Leaf(2), "NN", "r"), "NS", "r")
report = aggregate_report([parseval(small, small), parseval(right_branching(5), left_branching(5))])
print("micro bare", report.micro["bare"], "macro bare", report.macro["bare"])
print(report.to_text())

#include "freeform/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "freeform/errors.hpp"
#include "freeform/random.hpp"

namespace freeform::dataset {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    cells.push_back(cell);
    return cells;
}

std::uint8_t parse_genotype_cell(const std::string& cell, std::size_t row, std::size_t col) {
    if (cell.size() == 1) {
        if (cell[0] == '0') return 0;
        if (cell[0] == '1') return 1;
        if (cell[0] == '2') return 2;
    }
    throw MalformedCell(row, col, cell);
}

}  // namespace

std::size_t GenotypeDataset::class_index(const std::string& label) const {
    for (std::size_t i = 0; i < class_set.size(); ++i) {
        if (class_set[i] == label) return i;
    }
    throw Error("label not in class set: \"" + label + "\"");
}

std::vector<int> GenotypeDataset::label_indices() const {
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < class_set.size(); ++i) index[class_set[i]] = static_cast<int>(i);
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(index.at(l));
    return out;
}

std::vector<std::vector<std::size_t>> GenotypeDataset::rows_by_class() const {
    std::vector<std::vector<std::size_t>> by_class(class_set.size());
    const auto idx = label_indices();
    for (std::size_t i = 0; i < idx.size(); ++i) by_class[static_cast<std::size_t>(idx[i])].push_back(i);
    return by_class;
}

GenotypeDataset load_dataset(const std::filesystem::path& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset file: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw Error("empty dataset file: " + path.string());
    const auto header = split_csv_line(line);
    if (header.size() < 3) throw Error("header must have at least sample id, one variant and a label");

    std::size_t label_col = header.size() - 1;
    if (!label_column.empty()) {
        auto it = std::find(header.begin(), header.end(), label_column);
        if (it == header.end()) throw MissingLabelColumn(label_column);
        label_col = static_cast<std::size_t>(it - header.begin());
        if (label_col == 0) throw MissingLabelColumn(label_column);
    }

    GenotypeDataset ds;
    std::unordered_set<std::string> seen;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (c == label_col) continue;
        const std::string& name = header[c];
        if (name.empty()) throw Error("empty variant name in header column " + std::to_string(c));
        if (!seen.insert(name).second) throw DuplicateVariantName(name);
        ds.variant_names.push_back(name);
    }

    std::unordered_set<std::string> classes_seen;
    std::size_t row_number = 0;  // data rows, 0-based
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw Error("row " + std::to_string(row_number) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
        }
        ds.sample_ids.push_back(cells[0]);
        std::vector<std::uint8_t> row;
        row.reserve(ds.variant_names.size());
        for (std::size_t c = 1; c < cells.size(); ++c) {
            if (c == label_col) continue;
            row.push_back(parse_genotype_cell(cells[c], row_number, c));
        }
        ds.values.push_back(std::move(row));
        const std::string& label = cells[label_col];
        ds.labels.push_back(label);
        if (classes_seen.insert(label).second) ds.class_set.push_back(label);
        ++row_number;
    }
    return ds;
}

void write_dataset(const GenotypeDataset& ds, const std::filesystem::path& path,
                   const std::string& label_column) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write dataset file: " + path.string());
    out << "sample_id";
    for (const auto& v : ds.variant_names) out << ',' << v;
    out << ',' << label_column << '\n';
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        out << ds.sample_ids[i];
        for (std::uint8_t v : ds.values[i]) out << ',' << static_cast<int>(v);
        out << ',' << ds.labels[i] << '\n';
    }
    if (!out.good()) throw Error("write failed: " + path.string());
}

std::map<std::string, std::string> load_gene_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open gene map file: " + path.string());
    std::map<std::string, std::string> map;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (first && cells.size() >= 2 && cells[0] == "variant") {
            first = false;
            continue;  // optional header
        }
        first = false;
        if (cells.size() != 2) throw Error("gene map rows must be \"variant,gene\": " + line);
        map[cells[0]] = cells[1];
    }
    return map;
}

GenotypeDataset restrict_columns(const GenotypeDataset& ds, const std::vector<std::string>& variants) {
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t j = 0; j < ds.variant_names.size(); ++j) position[ds.variant_names[j]] = j;

    std::vector<std::size_t> cols;
    cols.reserve(variants.size());
    for (const auto& v : variants) {
        auto it = position.find(v);
        if (it == position.end()) throw UnknownVariant(v);
        cols.push_back(it->second);
    }

    GenotypeDataset out;
    out.sample_ids = ds.sample_ids;
    out.variant_names = variants;
    out.labels = ds.labels;
    out.class_set = ds.class_set;
    out.values.reserve(ds.n_samples());
    for (const auto& row : ds.values) {
        std::vector<std::uint8_t> r;
        r.reserve(cols.size());
        for (std::size_t c : cols) r.push_back(row[c]);
        out.values.push_back(std::move(r));
    }
    return out;
}

GenotypeDataset subset_rows(const GenotypeDataset& ds, const std::vector<std::size_t>& indices) {
    GenotypeDataset out;
    out.variant_names = ds.variant_names;
    out.class_set = ds.class_set;
    out.sample_ids.reserve(indices.size());
    out.values.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= ds.n_samples()) throw Error("row index " + std::to_string(i) + " out of range");
        out.sample_ids.push_back(ds.sample_ids[i]);
        out.values.push_back(ds.values[i]);
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

DataMatrix to_data_matrix(const GenotypeDataset& ds) {
    std::vector<std::size_t> all(ds.n_samples());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return to_data_matrix(ds, all);
}

DataMatrix to_data_matrix(const GenotypeDataset& ds, const std::vector<std::size_t>& indices) {
    DataMatrix m;
    m.column_names = ds.variant_names;
    m.class_order = ds.class_set;
    const auto label_idx = ds.label_indices();
    m.rows.reserve(indices.size());
    m.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        std::vector<double> row;
        row.reserve(ds.n_variants());
        for (std::uint8_t v : ds.values[i]) row.push_back(static_cast<double>(v));
        m.rows.push_back(std::move(row));
        m.labels.push_back(label_idx[i]);
    }
    return m;
}

FewShotSample sample_few_shot(const GenotypeDataset& ds, std::size_t n, std::uint64_t seed) {
    const std::size_t n_classes = ds.class_set.size();
    if (n < n_classes) throw TooFewShots(n, n_classes);
    if (n > ds.n_samples()) {
        throw Error("requested " + std::to_string(n) + " shots from " +
                    std::to_string(ds.n_samples()) + " samples");
    }

    rng::Pcg gen(rng::derive_seed(seed, {0x5a3d, n}));
    const auto by_class = ds.rows_by_class();

    std::vector<std::size_t> picked;
    std::vector<bool> taken(ds.n_samples(), false);
    // one per class first, uniformly within the class
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) {
            throw DegenerateSplit("class \"" + ds.class_set[c] + "\" has no rows to sample");
        }
        const std::size_t r = by_class[c][gen.below(by_class[c].size())];
        picked.push_back(r);
        taken[r] = true;
    }
    // remainder uniform without replacement over the untaken rows
    std::vector<std::size_t> pool;
    pool.reserve(ds.n_samples() - picked.size());
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        if (!taken[i]) pool.push_back(i);
    }
    const std::size_t extra = n - picked.size();
    for (std::size_t idx : gen.sample_indices(pool.size(), extra)) picked.push_back(pool[idx]);

    return FewShotSample{std::move(picked), seed};
}

std::string serialize_example(const GenotypeDataset& ds, std::size_t row,
                              const std::vector<std::string>& features,
                              const SerializationTemplate& tmpl, bool include_label) {
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t j = 0; j < ds.variant_names.size(); ++j) position[ds.variant_names[j]] = j;

    std::ostringstream out;
    bool first = true;
    for (const auto& feature : features) {
        auto it = position.find(feature);
        if (it == position.end()) throw UnknownVariant(feature);
        const int value = static_cast<int>(ds.values[row][it->second]);

        std::string rendered = feature;
        auto gene = tmpl.gene_map.find(feature);
        if (gene != tmpl.gene_map.end()) rendered += " (gene: " + gene->second + ")";

        if (!first) out << ' ';
        first = false;
        if (tmpl.style == SerializationStyle::Simple) {
            out << rendered << " is " << value << '.';
        } else {
            out << "The " << rendered << " variant of the person has " << value << " minor alleles.";
        }
    }
    if (include_label) {
        if (!first) out << ' ';
        out << "Answer: " << ds.labels[row];
    }
    return out.str();
}

CvFolds stratified_cv_folds(const std::vector<int>& labels, std::size_t n_classes, std::size_t k,
                            std::uint64_t seed) {
    if (k < 2) throw Error("k must be at least 2");
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }

    std::size_t min_count = labels.size();
    for (const auto& rows : by_class) min_count = std::min(min_count, rows.size());

    CvFolds out;
    if (min_count < 2) {
        throw DegenerateSplit("a class has fewer than 2 members; no split can cover every class "
                              "on every training side");
    }
    out.k_used = std::min(k, min_count);
    if (out.k_used < k) {
        out.warnings.push_back("k lowered from " + std::to_string(k) + " to " +
                               std::to_string(out.k_used) + " so every class has at least one "
                               "member per fold");
    }

    const std::size_t k_eff = out.k_used;
    std::vector<std::vector<std::size_t>> validation(k_eff);
    rng::Pcg gen(rng::derive_seed(seed, {0xf01d, k}));
    for (auto rows : by_class) {
        gen.shuffle(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) validation[i % k_eff].push_back(rows[i]);
    }

    for (std::size_t f = 0; f < k_eff; ++f) {
        CvFold fold;
        std::sort(validation[f].begin(), validation[f].end());
        fold.validation = validation[f];
        std::vector<bool> in_val(labels.size(), false);
        for (std::size_t i : fold.validation) in_val[i] = true;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!in_val[i]) fold.train.push_back(i);
        }
        out.folds.push_back(std::move(fold));
    }
    return out;
}

CvFolds stratified_cv_folds(const GenotypeDataset& ds, std::size_t k, std::uint64_t seed) {
    return stratified_cv_folds(ds.label_indices(), ds.class_set.size(), k, seed);
}

}  // namespace freeform::dataset

#include "snsteg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "snsteg/init.hpp"

namespace snsteg {

namespace fs = std::filesystem;

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(const std::string& s, std::size_t& pos) {
    while (pos < s.size()) {
        const char ch = s[pos];
        if (ch == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(ch))) {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) && s[pos] != '#') ++pos;
    return s.substr(start, pos - start);
}

std::size_t parse_header_number(const std::string& tok, const char* what) {
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit))
        throw FormatError(std::string("pgm: malformed ") + what + " '" + tok + "'");
    return static_cast<std::size_t>(std::stoull(tok));
}

std::uint64_t fnv(std::uint64_t h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t rate_tag(double rate) {
    return 1000 + static_cast<std::uint64_t>(std::llround(rate * 1e6));
}

std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace

ImageGray decode_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    const std::string magic = next_token(bytes, pos);
    if (magic != "P5")
        throw FormatError("pgm: unsupported format '" + magic + "' (only binary P5 is read)");
    const std::size_t w = parse_header_number(next_token(bytes, pos), "width");
    const std::size_t h = parse_header_number(next_token(bytes, pos), "height");
    const std::size_t maxval = parse_header_number(next_token(bytes, pos), "maxval");
    if (maxval != 255) throw FormatError("pgm: maxval must be 255, got " + std::to_string(maxval));
    if (w == 0 || h == 0) throw FormatError("pgm: empty image");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError("pgm: missing separator before pixel data");
    ++pos;
    if (bytes.size() - pos < w * h)
        throw FormatError("pgm: truncated payload (" + std::to_string(bytes.size() - pos) + " of " +
                          std::to_string(w * h) + " bytes)");
    ImageGray img(w, h);
    std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos), w * h, img.pixels.begin());
    return img;
}

std::string encode_pgm(const ImageGray& image) {
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    return out;
}

ImageGray read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return decode_pgm(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_pgm(const ImageGray& image, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    const std::string bytes = encode_pgm(image);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

ImageGray synth_cover(std::uint64_t seed, std::size_t size, double smoothing) {
    if (size < 8) throw ConfigError("synth_cover: size must be >= 8");
    const std::size_t k = static_cast<std::size_t>(std::max<long>(1, std::lround(smoothing)));
    const std::size_t n = size + k - 1;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> field(n * n);
    for (double& v : field) v = normal(rng);

    // separable box filter, valid region only
    std::vector<double> rows(n * size);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < size; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += field[r * n + c + j];
            rows[r * size + c] = s / static_cast<double>(k);
        }
    std::vector<double> smooth(size * size);
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += rows[(r + j) * size + c];
            smooth[r * size + c] = s / static_cast<double>(k);
        }

    const auto [lo_it, hi_it] = std::minmax_element(smooth.begin(), smooth.end());
    const double lo = *lo_it;
    const double span = *hi_it - lo;
    ImageGray img(size, size);
    for (std::size_t i = 0; i < smooth.size(); ++i) {
        const double v = span > 0.0 ? (smooth[i] - lo) / span * 255.0 : 0.0;
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    return img;
}

ImageGray embed_pm1(const ImageGray& cover, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate <= 1.0))
        throw ConfigError("embed_pm1: rate must lie in [0, 1], got " + std::to_string(rate));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageGray stego = cover;
    for (auto& p : stego.pixels) {
        const bool change = u(rng) < rate;
        const bool up = u(rng) < 0.5;
        if (!change) continue;
        if (p == 0)
            p = 1;
        else if (p == 255)
            p = 254;
        else
            p = static_cast<std::uint8_t>(up ? p + 1 : p - 1);
    }
    return stego;
}

ImageGray rotate90(const ImageGray& image, int quarter_turns) {
    if (image.width != image.height)
        throw ShapeError("rotate90: image must be square, got " + std::to_string(image.width) + "x" +
                         std::to_string(image.height));
    const int q = ((quarter_turns % 4) + 4) % 4;
    ImageGray out = image;
    const std::size_t n = image.width;
    for (int t = 0; t < q; ++t) {
        ImageGray next(n, n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) next.at(n - 1 - c, r) = out.at(r, c);
        out = std::move(next);
    }
    return out;
}

double lag1_autocorrelation(const ImageGray& image) {
    double mean = 0.0;
    for (auto p : image.pixels) mean += p;
    mean /= static_cast<double>(image.pixels.size());
    double num = 0.0;
    double den = 0.0;
    for (std::size_t r = 0; r < image.height; ++r)
        for (std::size_t c = 0; c < image.width; ++c) {
            const double a = image.at(r, c) - mean;
            den += a * a;
            if (c + 1 < image.width) num += a * (image.at(r, c + 1) - mean);
        }
    return den > 0.0 ? num / den : 0.0;
}

void PairSet::push(ImageGray cover, ImageGray stego, std::string id) {
    if (cover.width != stego.width || cover.height != stego.height)
        throw ShapeError("pair " + id + ": cover and stego sizes differ");
    covers.push_back(std::move(cover));
    stegos.push_back(std::move(stego));
    ids.push_back(std::move(id));
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const ImageGray*>& images) {
    if (images.empty()) throw ShapeError("images_to_tensor: no images");
    const std::size_t h = images.front()->height;
    const std::size_t w = images.front()->width;
    Tensor<T> t(Shape{images.size(), 1, h, w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->height != h || images[i]->width != w)
            throw ShapeError("images_to_tensor: mixed image sizes in one batch");
        auto dst = t.sample(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(images[i]->pixels[j]);
    }
    return t;
}

template Tensor<float> images_to_tensor(const std::vector<const ImageGray*>&);
template Tensor<double> images_to_tensor(const std::vector<const ImageGray*>&);

namespace {

PairedBatch assemble_batch(const PairSet& set, const std::vector<std::size_t>& cover_indices,
                           const std::vector<std::size_t>& stego_sources) {
    if (cover_indices.empty() || cover_indices.size() != stego_sources.size())
        throw ConfigError("batch: need equal, non-zero numbers of covers and stegos");
    std::vector<const ImageGray*> imgs;
    for (std::size_t i : cover_indices) {
        if (i >= set.size()) throw ConfigError("batch: cover index out of range");
        imgs.push_back(&set.covers[i]);
    }
    for (std::size_t i : stego_sources) {
        if (i >= set.size()) throw ConfigError("batch: stego index out of range");
        imgs.push_back(&set.stegos[i]);
    }
    PairedBatch b;
    b.images = images_to_tensor<float>(imgs);
    b.labels.assign(cover_indices.size(), 0);
    b.labels.resize(2 * cover_indices.size(), 1);
    b.cover_index = cover_indices;
    b.pair_index = stego_sources;
    return b;
}

}  // namespace

PairedBatch make_unpaired_batch(const PairSet& set, const std::vector<std::size_t>& cover_indices,
                                const std::vector<std::size_t>& stego_sources) {
    const std::set<std::size_t> covers(cover_indices.begin(), cover_indices.end());
    for (std::size_t s : stego_sources)
        if (covers.count(s)) throw ConfigError("unpaired batch: stego source " + std::to_string(s) + " is also a cover");
    return assemble_batch(set, cover_indices, stego_sources);
}

PairedBatch make_paired_batch(const PairSet& set, const std::vector<std::size_t>& indices) {
    return assemble_batch(set, indices, indices);
}

PairedBatch make_paired_batch(const PairSet& set, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0 || batch_size % 2 != 0)
        throw ConfigError("paired batch size must be even and positive");
    if (set.size() < batch_size / 2)
        throw ConfigError("paired batch: " + std::to_string(set.size()) + " covers cannot fill " +
                          std::to_string(batch_size / 2) + " pairs");
    return make_paired_batch(set, sample_distinct(set.size(), batch_size / 2, seed));
}

PairedBatch make_unpaired_batch(const PairSet& set, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0 || batch_size % 2 != 0)
        throw ConfigError("unpaired batch size must be even and positive");
    if (set.size() < batch_size)
        throw ConfigError("unpaired batch: needs " + std::to_string(batch_size) +
                          " distinct covers, have " + std::to_string(set.size()));
    const auto idx = sample_distinct(set.size(), batch_size, seed);
    const std::size_t h = batch_size / 2;
    return make_unpaired_batch(set, {idx.begin(), idx.begin() + h}, {idx.begin() + h, idx.end()});
}

PairSet augment_rotations(const PairSet& set, double rate, std::uint64_t seed) {
    PairSet out = set;
    for (int r = 1; r < 4; ++r)
        for (std::size_t i = 0; i < set.size(); ++i) {
            ImageGray c = rotate90(set.covers[i], r);
            ImageGray s = embed_pm1(c, rate, derive_seed(seed, i * 4 + r));
            out.push(std::move(c), std::move(s), set.ids[i] + "@r" + std::to_string(r));
        }
    return out;
}

std::vector<std::string> DatasetManifest::payloads() const {
    std::set<std::string> p;
    for (const auto& e : entries)
        if (e.role == "stego") p.insert(e.payload);
    return {p.begin(), p.end()};
}

std::vector<std::string> DatasetManifest::covers(const std::string& split) const {
    std::vector<std::string> ids;
    for (const auto& e : entries)
        if (e.role == "cover" && e.split == split) ids.push_back(e.cover);
    return ids;
}

std::uint64_t DatasetManifest::hash(const std::string& split) const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& e : entries) {
        if (e.split != split) continue;
        h = fnv(h, e.path + '|' + e.role + '|' + std::to_string(e.seed) + '|' + e.payload + '|' +
                       e.cover + '|' + std::to_string(e.rotation) + '\n');
    }
    return h;
}

void write_manifest(std::ostream& os, const DatasetManifest& m) {
    os << "# snsteg manifest: path split role seed payload cover rotation\n";
    os << "seed " << m.seed << '\n';
    for (const auto& e : m.entries)
        os << (e.path.empty() ? "-" : e.path) << ' ' << e.split << ' ' << e.role << ' ' << e.seed
           << ' ' << e.payload << ' ' << e.cover << ' ' << e.rotation << '\n';
}

DatasetManifest read_manifest(std::istream& is) {
    DatasetManifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string first;
        ls >> first;
        if (first == "seed") {
            if (!(ls >> m.seed)) throw FormatError("manifest line " + std::to_string(lineno) + ": bad seed");
            continue;
        }
        ManifestEntry e;
        e.path = first == "-" ? "" : first;
        if (!(ls >> e.split >> e.role >> e.seed >> e.payload >> e.cover >> e.rotation))
            throw FormatError("manifest line " + std::to_string(lineno) + ": expected 7 fields");
        if (e.split != "train" && e.split != "test")
            throw FormatError("manifest line " + std::to_string(lineno) + ": split must be train or test");
        if (e.role != "cover" && e.role != "stego")
            throw FormatError("manifest line " + std::to_string(lineno) + ": role must be cover or stego");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_manifest(out, manifest);
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest " + path.string());
    return read_manifest(in);
}

DatasetManifest split_dataset(const std::vector<std::string>& cover_ids, double train_fraction,
                              std::uint64_t seed) {
    if (cover_ids.empty()) throw ConfigError("split_dataset: empty file list");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split_dataset: train fraction must lie in (0, 1)");
    std::vector<std::string> order = cover_ids;
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());
    const std::vector<std::string> sorted = order;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * order.size()));
    std::set<std::string> train(order.begin(), order.begin() + std::min(n_train, order.size()));

    DatasetManifest m;
    m.seed = seed;
    for (const auto& id : sorted) {
        ManifestEntry e;
        e.split = train.count(id) ? "train" : "test";
        e.role = "cover";
        e.payload = "-";
        e.cover = id;
        e.path = id;
        m.entries.push_back(std::move(e));
    }
    return m;
}

DatasetManifest augment_rotations(const DatasetManifest& manifest) {
    DatasetManifest out = manifest;
    std::map<std::string, std::vector<const ManifestEntry*>> stegos;
    for (const auto& e : manifest.entries)
        if (e.role == "stego") stegos[e.cover].push_back(&e);
    for (const auto& c : manifest.entries) {
        if (c.role != "cover" || c.split != "train" || c.rotation != 0) continue;
        for (int r = 1; r < 4; ++r) {
            ManifestEntry rc = c;
            rc.rotation = r;
            rc.cover = c.cover + "@r" + std::to_string(r);
            out.entries.push_back(rc);
            for (const ManifestEntry* s : stegos[c.cover]) {
                ManifestEntry rs = *s;
                rs.path.clear();
                rs.rotation = r;
                rs.cover = rc.cover;
                rs.seed = derive_seed(s->seed ? s->seed : manifest.seed, static_cast<std::uint64_t>(r));
                out.entries.push_back(std::move(rs));
            }
        }
    }
    return out;
}

DatasetManifest ingest_stego_dir(const fs::path& root, double train_fraction, std::uint64_t seed) {
    const fs::path cover_dir = root / "cover";
    if (!fs::is_directory(cover_dir)) throw Error("ingest: missing directory " + cover_dir.string());
    std::vector<std::string> names;
    for (const auto& f : fs::directory_iterator(cover_dir))
        if (f.path().extension() == ".pgm") names.push_back(f.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw Error("ingest: no .pgm covers under " + cover_dir.string());

    DatasetManifest m = split_dataset(names, train_fraction, seed);
    std::map<std::string, std::string> split_of;
    for (auto& e : m.entries) {
        e.path = "cover/" + e.cover;
        split_of[e.cover] = e.split;
    }
    const fs::path stego_root = root / "stego";
    if (!fs::is_directory(stego_root)) return m;
    std::vector<std::string> algos;
    for (const auto& d : fs::directory_iterator(stego_root))
        if (d.is_directory()) algos.push_back(d.path().filename().string());
    std::sort(algos.begin(), algos.end());
    for (const auto& algo : algos)
        for (const auto& name : names) {
            if (!fs::exists(stego_root / algo / name)) continue;
            ManifestEntry e;
            e.path = "stego/" + algo + "/" + name;
            e.split = split_of[name];
            e.role = "stego";
            e.payload = algo;
            e.cover = name;
            m.entries.push_back(std::move(e));
        }
    return m;
}

double payload_rate(const std::string& payload) {
    const auto us = payload.rfind('_');
    const std::string num = us == std::string::npos ? payload : payload.substr(us + 1);
    try {
        std::size_t used = 0;
        const double r = std::stod(num, &used);
        if (used == num.size()) return r;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("payload tag '" + payload + "' carries no numeric rate");
}

PairSet load_pairs(const DatasetManifest& manifest, const fs::path& base, const std::string& split,
                   const std::string& payload) {
    std::map<std::string, const ManifestEntry*> stego_of;
    for (const auto& e : manifest.entries)
        if (e.role == "stego" && e.payload == payload) stego_of[e.cover] = &e;
    std::map<std::string, const ManifestEntry*> by_cover;
    for (const auto& e : manifest.entries)
        if (e.role == "cover") by_cover[e.cover] = &e;

    PairSet set;
    for (const auto& e : manifest.entries) {
        if (e.role != "cover" || e.split != split) continue;
        auto it = stego_of.find(e.cover);
        if (it == stego_of.end())
            throw FormatError("manifest: cover " + e.cover + " has no stego for payload " + payload);
        ImageGray cover = rotate90(read_pgm(base / e.path), e.rotation);
        const ManifestEntry& s = *it->second;
        ImageGray stego = s.path.empty() ? embed_pm1(cover, payload_rate(payload), s.seed)
                                         : read_pgm(base / s.path);
        set.push(std::move(cover), std::move(stego), e.cover);
    }
    if (set.size() == 0)
        throw ConfigError("manifest has no '" + split + "' pairs for payload " + payload);
    return set;
}

std::string payload_tag(double rate) {
    std::ostringstream os;
    os << "pm1_" << rate;
    return os.str();
}

PairSet synth_pairs(std::size_t first, std::size_t count, std::size_t size, double smoothing,
                    double rate, std::uint64_t seed) {
    PairSet set;
    for (std::size_t k = first; k < first + count; ++k) {
        const std::uint64_t cs = derive_seed(seed, k);
        ImageGray c = synth_cover(cs, size, smoothing);
        ImageGray s = embed_pm1(c, rate, derive_seed(cs, rate_tag(rate)));
        std::ostringstream id;
        id << std::setw(5) << std::setfill('0') << k;
        set.push(std::move(c), std::move(s), id.str());
    }
    return set;
}

DatasetManifest write_synth_dataset(const SynthConfig& cfg, const fs::path& dir) {
    if (cfg.count == 0) throw ConfigError("synth: count must be >= 1");
    for (double r : cfg.rates)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("synth: rate " + std::to_string(r) + " outside [0, 1]");
    fs::create_directories(dir / "cover");
    std::vector<std::string> names;
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < cfg.count; ++k) {
        std::ostringstream name;
        name << std::setw(5) << std::setfill('0') << k << ".pgm";
        names.push_back(name.str());
        seeds.push_back(derive_seed(cfg.seed, k));
        write_pgm(synth_cover(seeds.back(), cfg.size, cfg.smoothing), dir / "cover" / names.back());
    }
    DatasetManifest m = split_dataset(names, cfg.train_fraction, cfg.seed);
    std::map<std::string, std::string> split_of;
    for (std::size_t k = 0; k < m.entries.size(); ++k) {
        m.entries[k].path = "cover/" + names[k];
        m.entries[k].seed = seeds[k];
        split_of[names[k]] = m.entries[k].split;
    }
    for (double rate : cfg.rates) {
        const std::string tag = payload_tag(rate);
        fs::create_directories(dir / "stego" / tag);
        for (std::size_t k = 0; k < cfg.count; ++k) {
            const std::uint64_t s = derive_seed(seeds[k], rate_tag(rate));
            const ImageGray cover = read_pgm(dir / "cover" / names[k]);
            write_pgm(embed_pm1(cover, rate, s), dir / "stego" / tag / names[k]);
            ManifestEntry e;
            e.path = "stego/" + tag + "/" + names[k];
            e.split = split_of[names[k]];
            e.role = "stego";
            e.seed = s;
            e.payload = tag;
            e.cover = names[k];
            m.entries.push_back(std::move(e));
        }
    }
    save_manifest(m, dir / "manifest.txt");
    return m;
}

}  // namespace snsteg

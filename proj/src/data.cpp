#include "ssml/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ssml/rng.hpp"

namespace ssml {

void SubjectDataset::validate() const {
    require_shape(samples.ndim() == 3, "dataset '" + subject_id + "': samples must be [N,C,T], got " +
                                           samples.shape_str());
    if (static_cast<int64_t>(labels.size()) != samples.dim(0))
        throw ShapeError("dataset '" + subject_id + "': " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(samples.dim(0)) + " samples");
    if (n_classes < 1) throw std::invalid_argument("dataset '" + subject_id + "': n_classes < 1");
    for (int y : labels)
        if (y < 0 || y >= n_classes)
            throw std::out_of_range("dataset '" + subject_id + "': label " + std::to_string(y) +
                                    " outside [0," + std::to_string(n_classes) + ")");
}

std::vector<int> SubjectDataset::class_counts() const {
    std::vector<int> counts(static_cast<size_t>(n_classes), 0);
    for (int y : labels) ++counts[static_cast<size_t>(y)];
    return counts;
}

Tensor gather_rows(const Tensor& samples, std::span<const int> idx) {
    require_shape(samples.ndim() == 3, "gather_rows: want [N,C,T], got " + samples.shape_str());
    if (idx.empty()) return Tensor{};
    const int c = samples.dim(1), t = samples.dim(2);
    const int64_t row = static_cast<int64_t>(c) * t;
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), c, t});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= samples.dim(0))
            throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]));
        std::copy_n(samples.data.begin() + idx[i] * row, row, out.data.begin() + static_cast<int64_t>(i) * row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic subject-shift generator
// ---------------------------------------------------------------------------

namespace {

// Smooth waveform field: a few random sinusoids per channel, RMS-normalized.
Tensor smooth_field(int channels, int time_len, std::mt19937_64& rng) {
    std::normal_distribution<double> amp(0.0, 1.0);
    std::uniform_int_distribution<int> freq(1, 6);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    Tensor field = Tensor::zeros({channels, time_len});
    for (int c = 0; c < channels; ++c) {
        double a[3], ph[3];
        int f[3];
        for (int k = 0; k < 3; ++k) {
            a[k] = amp(rng);
            f[k] = freq(rng);
            ph[k] = phase(rng);
        }
        for (int t = 0; t < time_len; ++t) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k)
                v += a[k] * std::sin(2.0 * M_PI * f[k] * t / time_len + ph[k]);
            field.data[static_cast<size_t>(c) * time_len + t] = static_cast<float>(v);
        }
    }
    double ss = 0.0;
    for (float v : field.data) ss += static_cast<double>(v) * v;
    const double rms = std::sqrt(ss / static_cast<double>(field.size()));
    if (rms > 0)
        for (float& v : field.data) v = static_cast<float>(v / rms);
    return field;
}

Tensor random_orthogonal(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    Tensor out = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] = static_cast<float>(q(i, j));
    return out;
}

}  // namespace

Tensor SynthTruth::clean_sample(int subject, int cls) const {
    const Tensor& m = mixes.at(static_cast<size_t>(subject));
    const Tensor& p = prototypes.at(static_cast<size_t>(cls));
    const Tensor& b = biases.at(static_cast<size_t>(subject));
    const int c = p.dim(0), t = p.dim(1);
    Tensor out = Tensor::zeros({c, t});
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mm(m.data.data(), c, c),
        pm(p.data.data(), c, t);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prod =
        mm.cast<double>() * pm.cast<double>();
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < t; ++j)
            out.data[static_cast<size_t>(i) * t + j] =
                static_cast<float>(prod(i, j)) + b.data[static_cast<size_t>(i) * t + j];
    return out;
}

int SynthTruth::bayes_classify(int subject, std::span<const float> x) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < prototypes.size(); ++j) {
        Tensor clean = clean_sample(subject, static_cast<int>(j));
        if (x.size() != clean.data.size()) throw ShapeError("bayes_classify: sample size mismatch");
        double d = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            const double diff = static_cast<double>(x[i]) - static_cast<double>(clean.data[i]);
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

std::pair<std::vector<SubjectDataset>, SynthTruth> synth_generate_with_truth(const SynthConfig& config) {
    if (config.n_subjects < 1 || config.n_classes < 2 || config.channels < 1 || config.time_len < 1)
        throw std::invalid_argument("synth_generate: invalid configuration");
    if (config.samples_per_subject < config.n_classes)
        throw std::invalid_argument("synth_generate: samples_per_subject " +
                                    std::to_string(config.samples_per_subject) + " < n_classes " +
                                    std::to_string(config.n_classes));
    if (config.shift_scale < 0 || config.noise_sd < 0)
        throw std::invalid_argument("synth_generate: negative shift_scale or noise_sd");

    std::mt19937_64 rng = make_rng(config.seed);
    const int c = config.channels, t = config.time_len, k = config.n_classes;

    SynthTruth truth;
    truth.noise_sd = config.noise_sd;
    for (int j = 0; j < k; ++j) truth.prototypes.push_back(smooth_field(c, t, rng));

    for (int s = 0; s < config.n_subjects; ++s) {
        // mix = I + shift*(Q - I): identity at shift 0, a random rotation at 1
        Tensor q = random_orthogonal(c, rng);
        Tensor mix = Tensor::zeros({c, c});
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j) {
                const float id = i == j ? 1.0f : 0.0f;
                mix.data[static_cast<size_t>(i) * c + j] =
                    id + config.shift_scale * (q.data[static_cast<size_t>(i) * c + j] - id);
            }
        truth.mixes.push_back(std::move(mix));
        Tensor bias = smooth_field(c, t, rng);
        for (float& v : bias.data) v *= 0.5f * config.shift_scale;
        truth.biases.push_back(std::move(bias));
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<SubjectDataset> datasets;
    for (int s = 0; s < config.n_subjects; ++s) {
        SubjectDataset ds;
        ds.subject_id = "S" + std::to_string(s);
        ds.n_classes = k;
        const int n = config.samples_per_subject;
        ds.samples = Tensor::zeros({n, c, t});
        ds.labels.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            // contiguous class blocks, remainder to the lower classes
            const int base = n / k, rem = n % k;
            int cls = 0, acc = 0;
            for (; cls < k; ++cls) {
                const int cnt = base + (cls < rem ? 1 : 0);
                if (i < acc + cnt) break;
                acc += cnt;
            }
            ds.labels[static_cast<size_t>(i)] = cls;
            Tensor clean = truth.clean_sample(s, cls);
            float* dst = ds.samples.data.data() + static_cast<size_t>(i) * c * t;
            for (int64_t e = 0; e < clean.size(); ++e)
                dst[e] = clean.data[static_cast<size_t>(e)] +
                         config.noise_sd * static_cast<float>(noise(rng));
        }
        ds.validate();
        datasets.push_back(std::move(ds));
    }
    return {std::move(datasets), std::move(truth)};
}

std::vector<SubjectDataset> synth_generate(const SynthConfig& config) {
    return synth_generate_with_truth(config).first;
}

std::pair<std::vector<SubjectDataset>, SubjectDataset> loso_split(const std::vector<SubjectDataset>& datasets,
                                                                  int target_index) {
    if (datasets.size() < 2)
        throw std::invalid_argument("loso_split: need at least 2 subjects, got " +
                                    std::to_string(datasets.size()));
    if (target_index < 0 || target_index >= static_cast<int>(datasets.size()))
        throw std::out_of_range("loso_split: target index " + std::to_string(target_index) + " of " +
                                std::to_string(datasets.size()) + " subjects");
    std::vector<SubjectDataset> sources;
    sources.reserve(datasets.size() - 1);
    for (int i = 0; i < static_cast<int>(datasets.size()); ++i)
        if (i != target_index) sources.push_back(datasets[static_cast<size_t>(i)]);
    return {std::move(sources), datasets[static_cast<size_t>(target_index)]};
}

FewShotSplit few_shot_sample(const SubjectDataset& target, int n_shot, double eval_fraction, uint64_t seed) {
    target.validate();
    if (n_shot < 0) throw std::invalid_argument("few_shot_sample: negative n_shot");
    if (eval_fraction < 0 || eval_fraction > 1)
        throw std::invalid_argument("few_shot_sample: eval_fraction outside [0,1]");

    std::vector<std::vector<int>> by_class(static_cast<size_t>(target.n_classes));
    for (int i = 0; i < target.n(); ++i) by_class[static_cast<size_t>(target.labels[static_cast<size_t>(i)])].push_back(i);
    for (int c = 0; c < target.n_classes; ++c)
        if (static_cast<int>(by_class[static_cast<size_t>(c)].size()) < n_shot + 1)
            throw std::invalid_argument("few_shot_sample: class " + std::to_string(c) + " has " +
                                        std::to_string(by_class[static_cast<size_t>(c)].size()) +
                                        " samples, need at least " + std::to_string(n_shot + 1));

    std::mt19937_64 rng = make_rng(seed);
    FewShotSplit split;
    for (int c = 0; c < target.n_classes; ++c) {
        auto& idx = by_class[static_cast<size_t>(c)];
        std::shuffle(idx.begin(), idx.end(), rng);
        const int rest = static_cast<int>(idx.size()) - n_shot;
        int n_eval = 0;
        if (eval_fraction > 0) n_eval = std::clamp<int>(static_cast<int>(std::llround(eval_fraction * rest)), 1, rest);
        for (int i = 0; i < n_shot; ++i) split.labeled_idx.push_back(idx[static_cast<size_t>(i)]);
        for (int i = n_shot; i < n_shot + n_eval; ++i) split.eval_idx.push_back(idx[static_cast<size_t>(i)]);
        for (int i = n_shot + n_eval; i < static_cast<int>(idx.size()); ++i)
            split.unlabeled_idx.push_back(idx[static_cast<size_t>(i)]);
    }
    auto labels_of = [&](const std::vector<int>& idx) {
        std::vector<int> out;
        out.reserve(idx.size());
        for (int i : idx) out.push_back(target.labels[static_cast<size_t>(i)]);
        return out;
    };
    split.labeled = {gather_rows(target.samples, split.labeled_idx), labels_of(split.labeled_idx)};
    split.eval = {gather_rows(target.samples, split.eval_idx), labels_of(split.eval_idx)};
    split.unlabeled = gather_rows(target.samples, split.unlabeled_idx);
    return split;
}

LabeledSet labeled_subset(const LabeledSet& labeled, int n_shot, int n_classes) {
    std::vector<int> taken(static_cast<size_t>(n_classes), 0);
    std::vector<int> keep;
    for (int i = 0; i < labeled.n(); ++i) {
        const int y = labeled.labels[static_cast<size_t>(i)];
        if (taken[static_cast<size_t>(y)] < n_shot) {
            keep.push_back(i);
            ++taken[static_cast<size_t>(y)];
        }
    }
    for (int c = 0; c < n_classes; ++c)
        if (taken[static_cast<size_t>(c)] < n_shot)
            throw std::invalid_argument("labeled_subset: class " + std::to_string(c) + " has only " +
                                        std::to_string(taken[static_cast<size_t>(c)]) + " of " +
                                        std::to_string(n_shot) + " shots");
    LabeledSet out;
    if (keep.empty()) return out;
    out.samples = gather_rows(labeled.samples, keep);
    for (int i : keep) out.labels.push_back(labeled.labels[static_cast<size_t>(i)]);
    return out;
}

// ---------------------------------------------------------------------------
// MSHD container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'S', 'H', 'D'};
constexpr uint16_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::ifstream& f, const char* what) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (f.gcount() != sizeof v) throw FormatError(std::string("MSHD: truncated while reading ") + what);
    return v;
}

}  // namespace

void save_dataset(const std::string& path, const std::vector<SubjectDataset>& datasets) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path);
    f.write(kMagic, 4);
    write_pod(f, kVersion);
    write_pod(f, static_cast<uint32_t>(datasets.size()));
    for (const SubjectDataset& ds : datasets) {
        ds.validate();
        write_pod(f, static_cast<uint32_t>(ds.subject_id.size()));
        f.write(ds.subject_id.data(), static_cast<std::streamsize>(ds.subject_id.size()));
        write_pod(f, static_cast<uint32_t>(ds.n()));
        write_pod(f, static_cast<uint32_t>(ds.channels()));
        write_pod(f, static_cast<uint32_t>(ds.time_len()));
        write_pod(f, static_cast<uint32_t>(ds.n_classes));
        f.write(reinterpret_cast<const char*>(ds.samples.data.data()),
                static_cast<std::streamsize>(ds.samples.data.size() * sizeof(float)));
        for (int y : ds.labels) write_pod(f, static_cast<int32_t>(y));
    }
}

std::vector<SubjectDataset> load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("MSHD: bad magic in " + path);
    const auto version = read_pod<uint16_t>(f, "version");
    if (version != kVersion)
        throw FormatError("MSHD: unsupported version " + std::to_string(version));
    const auto n_subjects = read_pod<uint32_t>(f, "subject count");
    std::vector<SubjectDataset> out;
    out.reserve(n_subjects);
    for (uint32_t s = 0; s < n_subjects; ++s) {
        SubjectDataset ds;
        const auto id_len = read_pod<uint32_t>(f, "id length");
        ds.subject_id.resize(id_len);
        f.read(ds.subject_id.data(), id_len);
        if (f.gcount() != static_cast<std::streamsize>(id_len)) throw FormatError("MSHD: truncated subject id");
        const auto n = read_pod<uint32_t>(f, "N");
        const auto c = read_pod<uint32_t>(f, "C");
        const auto t = read_pod<uint32_t>(f, "T");
        ds.n_classes = static_cast<int>(read_pod<uint32_t>(f, "n_classes"));
        if (n == 0 || c == 0 || t == 0) throw FormatError("MSHD: zero dimension in subject " + ds.subject_id);
        ds.samples = Tensor::zeros({static_cast<int>(n), static_cast<int>(c), static_cast<int>(t)});
        const auto bytes = static_cast<std::streamsize>(ds.samples.data.size() * sizeof(float));
        f.read(reinterpret_cast<char*>(ds.samples.data.data()), bytes);
        if (f.gcount() != bytes) throw FormatError("MSHD: truncated samples for subject " + ds.subject_id);
        ds.labels.resize(n);
        for (uint32_t i = 0; i < n; ++i) ds.labels[i] = read_pod<int32_t>(f, "label");
        ds.validate();
        out.push_back(std::move(ds));
    }
    char extra;
    if (f.read(&extra, 1); f.gcount() != 0) throw FormatError("MSHD: trailing bytes in " + path);
    return out;
}

void export_labels_csv(const std::string& path, const std::vector<SubjectDataset>& datasets) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << "subject_id,index,label\n";
    for (const SubjectDataset& ds : datasets)
        for (int i = 0; i < ds.n(); ++i)
            f << ds.subject_id << "," << i << "," << ds.labels[static_cast<size_t>(i)] << "\n";
}

}  // namespace ssml

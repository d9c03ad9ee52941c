import math
import time

import numpy as np
from django.test import SimpleTestCase

from alignment_scorer.audio import AudioFeatureSeq
from alignment_scorer.augment import (augmented_size, negative_sample_augment, spec_augment, spec_augment_masks,
                                      transform_labels)
from alignment_scorer.config import SpecAugmentParams
from alignment_scorer.exceptions import (AugmentError, ConfigError, DegenerateError, DuplicateIdError,
                                         ManifestError, MaskParamError, TeacherCoverageError)
from alignment_scorer.metrics import PredictionSet, write_predictions
from alignment_scorer.records import PairRecord, load_manifest, make_batches, write_manifest
from alignment_scorer.rng import make_rng
from alignment_scorer.teachers import (TeacherSpec, generate_synthetic_corpus, human_labels, load_teacher,
                                       matched_records, planted_teacher, pseudo_label)

from .helpers import TempDirMixin


def pairs(n, captions=None):
    return [PairRecord(id=f'r{i:05d}', audio_ref=f'a{i}',
                       caption=captions[i % len(captions)] if captions else f'caption {i}')
            for i in range(n)]


class ManifestTests(TempDirMixin, SimpleTestCase):
    def write(self, text, name='m.tsv'):
        path = self.tmp / name
        path.write_text(text, encoding='utf-8')
        return path

    def test_loads_rows_in_order(self):
        path = self.write('id\taudio_ref\tcaption\tlabel\n'
                          'a\ts1-000001\tdog barks\t0.5\n'
                          'b\ts1-000002\train\t\n'
                          'c\ts1-000003\tcar horn\t-1\n')
        records = load_manifest(path)
        self.assertEqual([r.id for r in records], ['a', 'b', 'c'])
        self.assertEqual([r.label for r in records], [0.5, None, -1.0])
        self.assertEqual(records[0].source_ids, ('a',))
        self.assertTrue(records[0].is_matched)

    def test_relative_path_uses_the_data_root(self):
        self.write('id\taudio_ref\tcaption\na\tx\ty\n')
        self.assertEqual(len(load_manifest('m.tsv', data_root=self.tmp)), 1)

    def test_missing_caption_reports_the_line(self):
        path = self.write('id\taudio_ref\tcaption\n'
                          'a\ts1-000001\tdog barks\n'
                          'b\ts1-000002\t\n')
        with self.assertRaises(ManifestError) as cm:
            load_manifest(path)
        self.assertEqual(cm.exception.line, 3)
        self.assertEqual(cm.exception.exit_code, 3)

    def test_duplicate_id(self):
        path = self.write('id\taudio_ref\tcaption\na\tx\ty\na\tx\tz\n')
        with self.assertRaises(DuplicateIdError) as cm:
            load_manifest(path)
        self.assertEqual(cm.exception.line, 3)

    def test_bad_headers_and_values(self):
        cases = [
            'audio_ref\tcaption\nx\ty\n',
            'id\taudio_ref\tcaption\tscore\na\tx\ty\t1\n',
            'id\taudio_ref\tcaption\tlabel\na\tx\ty\tloud\n',
            'id\taudio_ref\tcaption\tlabel\na\tx\ty\tinf\n',
            'id\taudio_ref\tcaption\na\tx\ty\textra\n',
            '',
        ]
        for i, text in enumerate(cases):
            with self.subTest(case=i), self.assertRaises(ManifestError):
                load_manifest(self.write(text, f'bad{i}.tsv'))
        with self.assertRaises(ManifestError):
            load_manifest(self.tmp / 'absent.tsv')

    def test_large_manifest_loads_quickly(self):
        records = pairs(7500)
        path = write_manifest(records, self.tmp / 'large.tsv')
        started = time.perf_counter()
        loaded = load_manifest(path)
        self.assertLess(time.perf_counter() - started, 1.0)
        self.assertEqual(loaded, records)

    def test_negatives_survive_a_file(self):
        records = negative_sample_augment(pairs(10), 2, seed=3)
        records = [r.with_label(i / 7) for i, r in enumerate(records)]
        path = write_manifest(records, self.tmp / 'neg.tsv')
        self.assertEqual(load_manifest(path), records)

    def test_negative_record_needs_two_sources(self):
        with self.assertRaises(ValueError):
            PairRecord(id='n', audio_ref='a', caption='c', provenance='negative_text', source_ids=('x',))


class BatchTests(SimpleTestCase):
    def test_sizes(self):
        records = pairs(33)
        self.assertEqual([len(b) for b in make_batches(records, 16, seed=1)], [16, 16, 1])
        self.assertEqual([len(b) for b in make_batches(records, 16, seed=1, drop_last=True)], [16, 16])

    def test_batches_partition_the_records(self):
        records = pairs(50)
        batches = make_batches(records, 8, seed=2)
        ids = [r.id for batch in batches for r in batch]
        self.assertEqual(sorted(ids), [r.id for r in records])

    def test_determinism(self):
        records = pairs(40)
        first = [[r.id for r in b] for b in make_batches(records, 8, seed=5)]
        second = [[r.id for r in b] for b in make_batches(records, 8, seed=5)]
        other = [[r.id for r in b] for b in make_batches(records, 8, seed=6)]
        self.assertEqual(first, second)
        self.assertNotEqual(first, other)

    def test_batch_size_one_is_rejected(self):
        with self.assertRaises(ConfigError):
            make_batches(pairs(4), 1, seed=0)


class NegativeSamplingTests(SimpleTestCase):
    def test_size_and_layout(self):
        rng = make_rng(0, 'augment-size')
        for _ in range(50):
            n, k = int(rng.integers(2, 30)), int(rng.integers(0, 5))
            records = pairs(n)
            out = negative_sample_augment(records, k, seed=int(rng.integers(0, 1000)))
            self.assertEqual(len(out), augmented_size(n, k))
            self.assertEqual(out[:n], records)
            self.assertEqual(len({r.id for r in out}), len(out))
            for r in out[n:]:
                self.assertFalse(r.is_matched)

    def test_two_records_swap_with_each_other(self):
        first, second = pairs(2)
        out = negative_sample_augment([first, second], 1, seed=9)
        for original, other, negative in ((first, second, out[2]), (second, first, out[3])):
            self.assertEqual(negative.source_ids, (original.id, other.id))
            if negative.provenance == 'negative_text':
                self.assertEqual((negative.audio_ref, negative.caption), (original.audio_ref, other.caption))
            else:
                self.assertEqual((negative.audio_ref, negative.caption), (other.audio_ref, original.caption))

    def test_zero_negatives_is_identity(self):
        records = pairs(5)
        self.assertEqual(negative_sample_augment(records, 0, seed=1), records)

    def test_rejects_bad_inputs(self):
        with self.assertRaises(AugmentError):
            negative_sample_augment(pairs(3), -1, seed=0)
        with self.assertRaises(AugmentError):
            negative_sample_augment(pairs(1), 1, seed=0)
        negative = negative_sample_augment(pairs(3), 1, seed=0)
        with self.assertRaises(AugmentError):
            negative_sample_augment(negative, 1, seed=0)

    def test_no_accidental_positives(self):
        records = pairs(500, captions=['dog', 'rain', 'siren'])
        out = negative_sample_augment(records, 200, seed=4)
        matched = {(r.audio_ref, r.caption) for r in records}
        negatives = out[len(records):]
        self.assertEqual(len(negatives), 100000)
        self.assertFalse(any((r.audio_ref, r.caption) in matched for r in negatives))

    def test_sides_are_balanced(self):
        out = negative_sample_augment(pairs(1000), 10, seed=8)
        text_side = sum(r.provenance == 'negative_text' for r in out[1000:])
        self.assertLess(abs(text_side - 5000), 6 * math.sqrt(10000 * 0.25))

    def test_published_corpus_arithmetic(self):
        size = augmented_size(273000, 3)
        self.assertEqual(size, 1092000)
        self.assertLess(abs(size - 1064000) / 1064000, 0.03)


class SpecAugmentTests(SimpleTestCase):
    def features(self, frames, channels, seed=0):
        return AudioFeatureSeq(frames=1.0 + make_rng(seed, 'feat').random((frames, channels)), frame_rate=50.0)

    def test_zero_widths_is_identity(self):
        feat = self.features(20, 6)
        params = SpecAugmentParams(freq_mask_width=0, time_mask_width=0)
        np.testing.assert_array_equal(spec_augment(feat, params, seed=3).frames, feat.frames)

    def test_masks_zero_exactly_the_drawn_bands(self):
        feat = self.features(100, 20)
        params = SpecAugmentParams(freq_mask_width=15, time_mask_width=30)
        for seed in range(1000):
            masks = spec_augment_masks(100, 20, params, seed)
            expected = np.ones((100, 20), dtype=bool)
            for start, width in masks.time:
                self.assertLessEqual(width, 30)
                self.assertLessEqual(start + width, 100)
                expected[start:start + width, :] = False
            for start, width in masks.channel:
                self.assertLessEqual(width, 15)
                self.assertLessEqual(start + width, 20)
                expected[:, start:start + width] = False
            out = spec_augment(feat, params, seed).frames
            np.testing.assert_array_equal(out == 0.0, ~expected)
            np.testing.assert_array_equal(out[expected], feat.frames[expected])

    def test_draw_order(self):
        params = SpecAugmentParams(freq_mask_width=3, time_mask_width=4, masks_per_axis=2)
        rng = make_rng(11, 'spec-augment')
        expected = []
        for max_width, length in ((4, 10), (4, 10), (3, 8), (3, 8)):
            width = int(rng.integers(0, max_width + 1))
            expected.append((int(rng.integers(0, length - width + 1)), width))
        masks = spec_augment_masks(10, 8, params, seed=11)
        self.assertEqual(masks.time + masks.channel, tuple(expected))

    def test_width_larger_than_axis(self):
        with self.assertRaises(MaskParamError):
            spec_augment(self.features(10, 4), SpecAugmentParams(freq_mask_width=5, time_mask_width=2), seed=0)
        with self.assertRaises(MaskParamError):
            spec_augment(self.features(10, 4), SpecAugmentParams(freq_mask_width=1, time_mask_width=11), seed=0)


class LabelTransformTests(SimpleTestCase):
    def labelled(self, labels):
        return [r.with_label(v) for r, v in zip(pairs(len(labels)), labels)]

    def test_modes(self):
        records = self.labelled([1.0, 3.0, 5.0, 7.0])
        self.assertEqual(transform_labels(records, 'none'), records)
        standard = np.array([r.label for r in transform_labels(records, 'standardize')])
        self.assertAlmostEqual(standard.mean(), 0.0, delta=1e-12)
        self.assertAlmostEqual(standard.std(), 1.0, delta=1e-12)
        self.assertEqual([r.label for r in transform_labels(records, 'minmax')], [0.0, 1 / 3, 2 / 3, 1.0])

    def test_errors(self):
        with self.assertRaises(ConfigError):
            transform_labels(self.labelled([1.0, 2.0]), 'rank')
        with self.assertRaises(ConfigError):
            transform_labels(pairs(3), 'minmax')
        with self.assertRaises(DegenerateError):
            transform_labels(self.labelled([2.0, 2.0]), 'standardize')
        with self.assertRaises(DegenerateError):
            transform_labels(self.labelled([2.0, 2.0]), 'minmax')


class TeacherTests(TempDirMixin, SimpleTestCase):
    def test_zero_weight_scores_one_half(self):
        teacher = TeacherSpec(kind='planted_bilinear', latent_dim=4, weight=np.zeros((4, 4)).tolist())
        records = matched_records('z', 1, 0, 5, 0, 4)
        self.assertEqual([r.label for r in pseudo_label(records, teacher)], [0.5] * 5)

    def test_deterministic(self):
        teacher = planted_teacher(3)
        records = negative_sample_augment(matched_records('d', 3, 0, 20, 0, 8), 2, seed=3)
        self.assertEqual(pseudo_label(records, teacher), pseudo_label(records, planted_teacher(3)))

    def test_matched_pairs_outscore_negatives(self):
        records = negative_sample_augment(matched_records('m', 7, 0, 250, 0, 8), 3, seed=7)
        labelled = pseudo_label(records, planted_teacher(7))
        self.assertEqual(len(labelled), 1000)
        matched = np.mean([r.label for r in labelled if r.is_matched])
        negative = np.mean([r.label for r in labelled if not r.is_matched])
        self.assertGreaterEqual(matched - negative, 0.1)

    def test_external_teacher(self):
        records = pairs(3)
        path = write_predictions(PredictionSet({'r00000': 0.1, 'r00001': 0.9, 'r00002': 0.4}), self.tmp / 't.tsv')
        teacher = load_teacher(path)
        self.assertEqual(teacher.kind, 'external_file')
        self.assertEqual([r.label for r in pseudo_label(records, teacher)], [0.1, 0.9, 0.4])
        with self.assertRaises(TeacherCoverageError):
            pseudo_label(pairs(4), teacher)

    def test_human_labels_are_noisy_squares(self):
        teacher = planted_teacher(5)
        records = matched_records('h', 5, 0, 10, 0, 8)
        scores = pseudo_label(records, teacher)
        for plain, human in zip(scores, human_labels(records, teacher, seed=2)):
            noise = 0.05 * make_rng(2, 'human-label', plain.id).standard_normal()
            self.assertEqual(human.label, plain.label ** 2 + float(noise))

    def test_corpus_split_sizes(self):
        for n, expected in ((16, [16, 16, 16, 16, 16]), (20, [20, 16, 20, 16, 16])):
            corpus = generate_synthetic_corpus(n, seed=1, teacher_seed=2, latent_dim=4)
            sizes = [len(corpus.splits[name]) for name in
                     ('pretrain', 'heldout', 'finetune_train', 'finetune_valid', 'finetune_test')]
            self.assertEqual(sizes, expected)
            self.assertTrue(all(r.label is None for r in corpus.splits['pretrain']))
            self.assertTrue(all(r.label is not None for r in corpus.splits['heldout']))

    def test_corpus_files(self):
        corpus = generate_synthetic_corpus(16, seed=1, teacher_seed=2, latent_dim=4)
        paths = corpus.write(self.tmp)
        self.assertEqual(load_teacher(paths['teacher']), corpus.teacher)
        for name, records in corpus.splits.items():
            self.assertEqual(load_manifest(paths[name]), records)

    def test_invalid_teacher_files(self):
        bad = self.tmp / 'bad.json'
        bad.write_text('{"kind": "planted_bilinear", "latent_dim": 2, "weight": [[1.0]]}')
        with self.assertRaises(ConfigError):
            load_teacher(bad)
        (self.tmp / 'broken.json').write_text('{')
        with self.assertRaises(ConfigError):
            load_teacher(self.tmp / 'broken.json')
        with self.assertRaises(ConfigError):
            load_teacher(self.tmp / 'absent.json')

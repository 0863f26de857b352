package o;

import java.util.*;

@SuppressWarnings("all")
public class C0012a<T extends List<? super Integer>> {
    static int f1a = 7;

    @SafeVarargs
    final <E extends Comparable<E>> E p(E... es) {
        if ((f1a * f1a) % 2 == 3) {
            f1a = f1a ^ 5;
            return null;
        }
        Runnable r = () -> {
            int x = f1a << 2;
        };
        java.util.function.BiFunction<Integer, Integer, Integer> g = (a, b) -> a + b;
        return es[0];
    }

    public static String p(String s) {
        char[] c = s.toCharArray();
        int[] perm = {3, 1, 0, 2};
        StringBuilder sb = new StringBuilder();
        for (int i : perm) {
            if (i < c.length) sb.append(c[i]);
        }
        return sb.toString();
    }
}

package android.support.v4;

public class Compat {
    public void f() throws Exception {
        java.security.MessageDigest.getInstance("MD5");
    }
}
